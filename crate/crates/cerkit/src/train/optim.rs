//! First-order adaptive-moment optimizer.

use crate::tensor::Tensor;

/// Adam with bias correction and optional decoupled weight decay.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Consume accumulated gradients and replace each parameter tensor with
    /// its updated value. Parameters without gradients are left unchanged.
    pub fn step(&mut self, params: &mut [Tensor<f32>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different model");
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.take_grad() else { continue };
            let mut data: Vec<f32> = p.data().to_vec();
            for (j, &g) in grad.iter().enumerate() {
                let g = g as f64 + self.weight_decay * data[j] as f64;
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / b1t;
                let v_hat = *v / b2t;
                data[j] -= (self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon)) as f32;
            }
            *p = Tensor::param(p.shape().to_vec(), data).expect("shape unchanged");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ops, Tape};

    #[test]
    fn minimizes_a_quadratic() {
        // minimize (x − 3)² from x = 0
        let mut params = vec![Tensor::param(vec![1], vec![0.0f32]).unwrap()];
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..200 {
            let tape = Tape::new();
            let target = Tensor::from_vec(vec![1], vec![-3.0f32]).unwrap();
            let diff = ops::add(&tape, &params[0], &target).unwrap();
            let loss = ops::sum(&tape, &ops::mul(&tape, &diff, &diff).unwrap()).unwrap();
            tape.backward(&loss).unwrap();
            adam.step(&mut params);
        }
        let x = params[0].data()[0];
        assert!((x - 3.0).abs() < 0.05, "x = {x}");
    }

    #[test]
    fn skips_params_without_gradients() {
        let mut params = vec![Tensor::param(vec![2], vec![1.0f32, 2.0]).unwrap()];
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8, 0.0);
        adam.step(&mut params);
        assert_eq!(params[0].data(), &[1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction, |Δ| of the first step is ≈ lr regardless of
        // gradient magnitude
        let mut params = vec![Tensor::param(vec![1], vec![0.0f32]).unwrap()];
        params[0].accumulate_grad(&[7.5]);
        let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-12, 0.0);
        adam.step(&mut params);
        assert!((params[0].data()[0] + 0.01).abs() < 1e-6);
    }
}
