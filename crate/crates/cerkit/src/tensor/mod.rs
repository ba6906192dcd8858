//! Minimal dense-tensor core with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major buffers; the only interior mutability is
//! gradient accumulation. A [`Tape`] records one forward pass and is consumed
//! by one [`Tape::backward`] call, which replays the recorded operations in
//! reverse and accumulates gradients additively (fan-out sums over paths).
//!
//! The element type is generic over [`Scalar`]: `f32` for training, `f64` for
//! gradient checking (see [`gradcheck::grad_check`]).

mod attention;
mod gradcheck;
pub mod ops;

pub use attention::{attention_unprojected, AttentionDiag};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Element types the tensor core supports.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    /// Short dtype name, used in error messages and diagnostics.
    const DTYPE: &'static str;

    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

/// Errors from tensor construction and operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?} ({detail})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },
    #[error("{op}: index {index} out of range for size {limit}")]
    IndexOutOfRange {
        op: &'static str,
        index: i64,
        limit: usize,
    },
    #[error("backward: loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("cross_entropy_masked: every frame is ignored, loss is undefined")]
    EmptyLoss,
    #[error("grad_check: function is not deterministic (two forward passes differ)")]
    NonDeterministic,
}

struct Inner<E: Scalar> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<E>>>,
}

/// A dense row-major tensor. Cloning is cheap (shared buffer).
pub struct Tensor<E: Scalar> {
    inner: Rc<Inner<E>>,
}

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &E::DTYPE)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<E: Scalar> Tensor<E> {
    /// Build a tensor from a shape and row-major data.
    ///
    /// The element count must equal the product of the dimensions.
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                op: "from_vec",
                shape,
                detail: format!("{} elements supplied", data.len()),
            });
        }
        Ok(Self::raw(shape, data, false))
    }

    /// A trainable parameter (gradients will be accumulated on backward).
    pub fn param(shape: Vec<usize>, data: Vec<E>) -> Result<Self, TensorError> {
        let t = Self::from_vec(shape, data)?;
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape: t.inner.shape.clone(),
                data: t.inner.data.clone(),
                requires_grad: true,
                grad: RefCell::new(None),
            }),
        })
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<E>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::raw(shape, vec![E::zero(); n], false)
    }

    pub fn scalar(x: E) -> Self {
        Self::raw(vec![], vec![x], false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Scalar value; panics if the tensor is not a single element.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data[0]
    }

    /// Rows of a rank-2 tensor (a rank-1 tensor counts as one row).
    pub(crate) fn rows(&self) -> usize {
        match self.inner.shape.len() {
            2 => self.inner.shape[0],
            _ => 1,
        }
    }

    pub(crate) fn is_matrix(&self) -> bool {
        self.inner.shape.len() == 2
    }

    /// Current gradient, cloned, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    /// Remove and return the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, &gi) in existing.iter_mut().zip(g) {
                    *e = *e + gi;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// True if any element is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.inner.data.iter().any(|x| !x.is_finite())
    }

    /// Same data reinterpreted in another element type (copies).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self.inner.data.iter().map(|x| T::of_f64(x.as_f64())).collect();
        Tensor::raw(self.inner.shape.clone(), data, false)
    }

    /// Copy of this tensor with the same data and `requires_grad` set.
    pub fn to_param(&self) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                shape: self.inner.shape.clone(),
                data: self.inner.data.clone(),
                requires_grad: true,
                grad: RefCell::new(None),
            }),
        }
    }
}

type BackwardFn = Box<dyn FnOnce()>;

/// Records one forward pass; consumed by one backward pass.
///
/// Operations are appended in execution order, so inputs are always recorded
/// before the operation that consumes them. `backward` replays the entries in
/// reverse, accumulating into each tensor's gradient buffer. A disabled tape
/// (inference) records nothing.
pub struct Tape<E: Scalar> {
    entries: RefCell<Vec<BackwardFn>>,
    enabled: bool,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Scalar> Tape<E> {
    /// A recording tape for one forward/backward cycle.
    pub fn new() -> Self {
        Tape {
            entries: RefCell::new(Vec::new()),
            enabled: true,
            _marker: std::marker::PhantomData,
        }
    }

    /// A non-recording tape for inference.
    pub fn disabled() -> Self {
        Tape {
            entries: RefCell::new(Vec::new()),
            enabled: false,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.borrow().is_empty()
    }

    /// Whether an op consuming these inputs should record itself.
    pub(crate) fn tracks(&self, inputs: &[&Tensor<E>]) -> bool {
        self.enabled && inputs.iter().any(|t| t.requires_grad())
    }

    pub(crate) fn record(&self, f: impl FnOnce() + 'static) {
        self.entries.borrow_mut().push(Box::new(f));
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Seeds the loss gradient with 1, replays every recorded operation in
    /// reverse order, and leaves `∂loss/∂t` on every tensor that required
    /// gradients. The tape is cleared afterwards.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<(), TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        loss.accumulate_grad(&[E::one()]);
        let entries = std::mem::take(&mut *self.entries.borrow_mut());
        for entry in entries.into_iter().rev() {
            entry();
        }
        Ok(())
    }
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        let err = Tensor::<f64>::from_vec(vec![2, 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::InvalidShape { .. }));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::<f64>::new();
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let err = tape.backward(&x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let tape = Tape::new();
        let x = Tensor::param(vec![2, 3], vec![0.5f64; 6]).unwrap();
        let loss = ops::sum(&tape, &x).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_quadratic() {
        // loss = sum(x ⊙ x) at x = [3] → grad 6
        let tape = Tape::new();
        let x = Tensor::param(vec![1], vec![3.0f64]).unwrap();
        let sq = ops::mul(&tape, &x, &x).unwrap();
        let loss = ops::sum(&tape, &sq).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn fanout_accumulates_path_gradients() {
        // y = 2x, z = 3x, loss = sum(y + z) → dx = 5 on a two-path graph.
        let tape = Tape::new();
        let x = Tensor::param(vec![1], vec![1.0f64]).unwrap();
        let y = ops::scale(&tape, &x, 2.0).unwrap();
        let z = ops::scale(&tape, &x, 3.0).unwrap();
        let s = ops::add(&tape, &y, &z).unwrap();
        let loss = ops::sum(&tape, &s).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
    }

    #[test]
    fn tape_is_consumed_by_backward() {
        let tape = Tape::new();
        let x = Tensor::param(vec![1], vec![2.0f64]).unwrap();
        let loss = ops::sum(&tape, &x).unwrap();
        assert_eq!(tape.len(), 1);
        tape.backward(&loss).unwrap();
        assert!(tape.is_empty());
    }

    #[test]
    fn disabled_tape_records_nothing() {
        let tape = Tape::disabled();
        let x = Tensor::param(vec![2], vec![1.0f64, 2.0]).unwrap();
        let y = ops::scale(&tape, &x, 2.0).unwrap();
        assert!(tape.is_empty());
        assert!(!y.requires_grad());
    }
}
