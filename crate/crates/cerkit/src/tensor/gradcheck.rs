//! Finite-difference gradient oracle.
//!
//! Validates analytic gradients from the tape against central differences.
//! Runs in `f64`; the checked function must be deterministic (dropout off),
//! which is verified by evaluating the base point twice.

use super::{Tape, Tensor, TensorError};

/// Location and magnitude of the worst analytic/numeric disagreement.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare analytic gradients of a scalar function against central finite
/// differences, returning the worst relative error over all coordinates.
///
/// `f` receives a tape and the parameter list and must build its output from
/// those exact tensors. The relative error per coordinate is
/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    Ok(grad_check_report(f, params, epsilon)?.max_rel_error)
}

/// [`grad_check`] with the worst coordinate identified.
pub fn grad_check_report<F>(
    f: F,
    params: &[Tensor<f64>],
    epsilon: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let tape = Tape::disabled();
        let out = f(&tape, ps)?;
        if out.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: out.shape().to_vec(),
            });
        }
        Ok(out.item())
    };

    let base: Vec<Tensor<f64>> = params.to_vec();
    let v1 = eval(&base)?;
    let v2 = eval(&base)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(TensorError::NonDeterministic);
    }

    // Analytic gradients from one recorded forward/backward cycle.
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape, params)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for p in params {
        p.zero_grad();
    }

    let mut report = GradCheckReport::default();
    for (pi, p) in params.iter().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        for j in 0..p.numel() {
            let perturbed = |delta: f64| -> Result<f64, TensorError> {
                let mut data = p.data().to_vec();
                data[j] += delta;
                let mut ps = base.clone();
                ps[pi] = Tensor::param(p.shape().to_vec(), data)?;
                eval(&ps)
            };
            let numeric = (perturbed(epsilon)? - perturbed(-epsilon)?) / (2.0 * epsilon);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst_param: pi,
                    worst_coord: j,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{attention_unprojected, ops};

    #[test]
    fn quadratic_is_exact() {
        // f(x) = x² at x = 3: central differences are exact for quadratics.
        let x = Tensor::param(vec![1], vec![3.0]).unwrap();
        let err = grad_check(
            |tape, ps| {
                let sq = ops::mul(tape, &ps[0], &ps[0])?;
                ops::sum(tape, &sq)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn attention_composed_with_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
        let x = Tensor::param(vec![4, 3], data).unwrap();
        let err = grad_check(
            |tape, ps| {
                let diag = attention_unprojected(tape, &ps[0])?;
                // fold both outputs in so weight gradients are exercised too
                let s1 = ops::sum(tape, &diag.output)?;
                let sq = ops::mul(tape, &diag.weights, &diag.weights)?;
                let s2 = ops::sum(tape, &sq)?;
                ops::add(tape, &s1, &s2)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn detects_nondeterminism() {
        use std::cell::Cell;
        let calls = Cell::new(0.0f64);
        let x = Tensor::param(vec![1], vec![1.0]).unwrap();
        let err = grad_check(
            |tape, ps| {
                calls.set(calls.get() + 1.0);
                let noisy = ops::scale(tape, &ps[0], 1.0 + calls.get())?;
                ops::sum(tape, &noisy)
            },
            &[x],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonDeterministic));
    }
}
