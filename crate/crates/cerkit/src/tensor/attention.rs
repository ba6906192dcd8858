//! Projection-free self-attention diagnostic.
//!
//! This is the analysis form of self-attention: similarities are raw dot
//! products of the input rows, scaled by `1/√d` and row-softmaxed, and the
//! output is the weighted sum of the same rows. The trained model uses
//! projected multi-head attention; this form exists to study what the
//! attention weights do as the categorical diversity of a sequence changes
//! (on a constant sequence it degenerates to plain averaging).

use super::{ops, Scalar, Tape, Tensor, TensorError};

/// Output and weight matrix of one projection-free attention pass.
#[derive(Debug, Clone)]
pub struct AttentionDiag<E: Scalar> {
    /// `N×d` attended output; row i is the weighted sum of input rows.
    pub output: Tensor<E>,
    /// `N×N` row-stochastic weight matrix.
    pub weights: Tensor<E>,
}

/// Self-attention of an `N×d` sequence against itself, without projections.
///
/// `weights = softmax_rows(x·xᵀ/√d)`, `output = weights·x`. Differentiable:
/// composing with a scalar reduction supports `grad_check`.
pub fn attention_unprojected<E: Scalar>(
    tape: &Tape<E>,
    x: &Tensor<E>,
) -> Result<AttentionDiag<E>, TensorError> {
    let d = match x.shape() {
        [n, d] if *n >= 1 && *d >= 1 => *d,
        other => {
            return Err(TensorError::InvalidShape {
                op: "attention_unprojected",
                shape: other.to_vec(),
                detail: "expected N×d with N ≥ 1, d ≥ 1".into(),
            })
        }
    };
    let xt = ops::transpose(tape, x)?;
    let scores = ops::matmul(tape, x, &xt)?;
    let scaled = ops::scale(tape, &scores, 1.0 / (d as f64).sqrt())?;
    let weights = ops::softmax_rows(tape, &scaled)?;
    let output = ops::matmul(tape, &weights, x)?;
    Ok(AttentionDiag { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_sequence_degenerates_to_averaging() {
        // All rows identical → every weight is exactly 1/N and every output
        // row reproduces the input row.
        let tape = Tape::disabled();
        let n = 5;
        let v = [0.3f64, -1.2, 2.0];
        let x = Tensor::from_vec(vec![n, 3], v.repeat(n)).unwrap();
        let diag = attention_unprojected(&tape, &x).unwrap();
        for &w in diag.weights.data() {
            assert_abs_diff_eq!(w, 1.0 / n as f64, epsilon = 1e-12);
        }
        for row in 0..n {
            for c in 0..3 {
                assert_abs_diff_eq!(diag.output.data()[row * 3 + c], v[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_element_sequence() {
        let tape = Tape::disabled();
        let x = Tensor::from_vec(vec![1, 2], vec![4.0f64, -1.0]).unwrap();
        let diag = attention_unprojected(&tape, &x).unwrap();
        assert_eq!(diag.weights.data(), &[1.0]);
        assert_eq!(diag.output.data(), &[4.0, -1.0]);
    }

    #[test]
    fn two_row_hand_evaluation() {
        // x = [[1],[0]], d = 1:
        // weights = [[e/(1+e), 1/(1+e)], [0.5, 0.5]], output = [[e/(1+e)], [0.5]]
        let tape = Tape::disabled();
        let x = Tensor::from_vec(vec![2, 1], vec![1.0f64, 0.0]).unwrap();
        let diag = attention_unprojected(&tape, &x).unwrap();
        let e = std::f64::consts::E;
        let w00 = e / (1.0 + e);
        assert_abs_diff_eq!(diag.weights.data()[0], w00, epsilon = 1e-12);
        assert_abs_diff_eq!(diag.weights.data()[1], 1.0 - w00, epsilon = 1e-12);
        assert_abs_diff_eq!(diag.weights.data()[2], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(diag.weights.data()[3], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(diag.output.data()[0], 0.7310585786300049, epsilon = 1e-10);
        assert_abs_diff_eq!(diag.output.data()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn permutation_equivariance() {
        let tape = Tape::disabled();
        let x = Tensor::from_vec(
            vec![3, 2],
            vec![0.1f64, 0.9, -0.4, 0.2, 1.5, -2.0],
        )
        .unwrap();
        let perm = [2usize, 0, 1];
        let permuted: Vec<f64> = perm
            .iter()
            .flat_map(|&r| x.data()[r * 2..(r + 1) * 2].to_vec())
            .collect();
        let xp = Tensor::from_vec(vec![3, 2], permuted).unwrap();
        let a = attention_unprojected(&tape, &x).unwrap();
        let b = attention_unprojected(&tape, &xp).unwrap();
        for (i, &r) in perm.iter().enumerate() {
            for c in 0..2 {
                assert_abs_diff_eq!(
                    b.output.data()[i * 2 + c],
                    a.output.data()[r * 2 + c],
                    epsilon = 1e-12
                );
            }
            for (j, &s) in perm.iter().enumerate() {
                assert_abs_diff_eq!(
                    b.weights.data()[i * 3 + j],
                    a.weights.data()[r * 3 + s],
                    epsilon = 1e-12
                );
            }
        }
    }
}
