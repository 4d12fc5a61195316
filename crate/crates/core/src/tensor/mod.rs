//! Dense N-d tensors with tape-based reverse-mode automatic differentiation.
//!
//! Image-like data uses the `N×C×H×W` layout throughout. Tensors are
//! immutable once built; every operation returns a fresh tensor and, when
//! gradient recording is enabled and any input requires a gradient, records a
//! backward rule that [`Tensor::backward`] replays.

mod autograd;
mod conv;
pub mod counter;
mod element;
mod elementwise;
pub mod gradcheck;
mod linalg;
mod norm;
mod resample;
mod shape_ops;

use std::cell::Cell;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use autograd::Tape;
pub use conv::{conv2d, conv_output_size, Conv2dOptions};
pub use element::Element;
pub(crate) use element::lit;
pub use norm::{batch_norm2d, BatchNormState, NormMode};
pub use resample::{adaptive_avg_pool_to, avg_pool_to, bilinear_upsample};
pub use shape_ops::concat;

use crate::error::{config_err, usage_err, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule: `(output data, output grad) -> grad per input` (None when an
/// input does not need one).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct GradFn<T: Element> {
    pub(crate) name: &'static str,
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
    grad: Mutex<Option<Vec<T>>>,
}

/// Reference-counted tensor handle. Cloning is cheap and shares storage.
pub struct Tensor<T: Element = f32> {
    inner: Arc<Inner<T>>,
}

/// Value equality: same shape and elementwise-equal data. Graph state is ignored.
impl<T: Element> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data() == other.data()
    }
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.inner.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("dtype", &T::DTYPE)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("op", &self.inner.grad_fn.as_ref().map(|g| g.name))
            .field("data", &preview)
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(config_err(format!("zero-sized dimension in shape {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(config_err(format!(
            "shape {shape:?} needs {numel} elements, got {len}"
        )));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            inner: Arc::new(Inner {
                shape,
                data,
                requires_grad,
                grad_fn,
                grad: Mutex::new(None),
            }),
        }
    }

    /// Constant (non-differentiable) tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates a gradient during [`Tensor::backward`].
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![1], vec![v], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(vec![v; n], shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Standard-normal samples scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Result<Self> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Self::new(data, shape)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.random_range(lo..hi))).collect();
        Self::new(data, shape)
    }

    /// Records an operation result; the backward rule is only kept when
    /// gradient recording is on and some input requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        name: &'static str,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let grad_fn = GradFn {
                name,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                backward: Box::new(backward),
            };
            Self::build(shape, data, true, Some(grad_fn))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True for tensors created directly rather than by an operation.
    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.grad_fn.as_ref().map(|g| g.name)
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<T>> {
        self.inner.grad_fn.as_ref()
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    /// Accumulated gradient of a leaf, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Removes and returns the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").take()
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(usage_err(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(config_err(format!(
                "expected N×C×H×W tensor, got shape {:?}",
                self.shape()
            ))),
        }
    }

    /// Converts to another precision (constant result).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.inner.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::build(self.inner.shape.clone(), data, false, None)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
