//! Layer vocabulary: conv/BN building blocks, inverted residual blocks,
//! batch-normalised cross-attention, the depthwise FFN and the transformer
//! block that combines them.

mod attention;
mod block;
mod ffn;
mod inverted_residual;
mod layers;

use std::sync::{Mutex, RwLock};

pub use attention::{AttentionSpec, CrossAttention};
pub use block::TransformerBlock;
pub use ffn::{Ffn, FfnSpec};
pub use inverted_residual::{InvertedResidual, InvertedResidualSpec};
pub use layers::{Activation, BatchNorm2d, Conv2d, ConvBn, NormConfig};

use crate::error::{config_err, Result};
use crate::tensor::{BatchNormState, Element, Tensor};

/// Learnable tensor slot. The optimiser swaps in a fresh leaf after each step.
pub struct Param<T: Element> {
    value: RwLock<Tensor<T>>,
}

impl<T: Element> Param<T> {
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            value: RwLock::new(Tensor::param(data, shape)?),
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![T::zero(); shape.iter().product()], shape)
    }

    /// Current value as a gradient-tracking leaf.
    pub fn get(&self) -> Tensor<T> {
        self.value.read().expect("param lock poisoned").clone()
    }

    /// Replaces the values, dropping any accumulated gradient.
    pub fn set(&self, data: Vec<T>) -> Result<()> {
        let shape = self.shape();
        if data.len() != shape.iter().product::<usize>() {
            return Err(config_err(format!(
                "parameter of shape {shape:?} cannot take {} values",
                data.len()
            )));
        }
        *self.value.write().expect("param lock poisoned") = Tensor::param(data, &shape)?;
        Ok(())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.get().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.get().numel()
    }

    pub fn fill(&self, v: T) -> Result<()> {
        self.set(vec![v; self.numel()])
    }
}

impl<T: Element> Clone for Param<T> {
    fn clone(&self) -> Self {
        let t = self.get();
        Self::new(t.to_vec(), t.shape()).expect("cloned shape is valid")
    }
}

impl<T: Element> std::fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param{:?}", self.shape())
    }
}

/// Something a [`Module`] exposes to visitors.
pub enum Entry<'a, T: Element> {
    Param(&'a Param<T>),
    /// Batch-norm running statistics (not learned, but persisted).
    Stats(&'a Mutex<BatchNormState<T>>),
}

/// A tree of named parameters and buffers.
pub trait Module<T: Element> {
    /// Calls `f` for every parameter and buffer, with dotted names under `scope`.
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>));
}

pub fn scoped(scope: &str, name: &str) -> String {
    if scope.is_empty() {
        name.to_string()
    } else {
        format!("{scope}.{name}")
    }
}

/// All parameters of a module, in visiting order.
pub fn named_params<'a, T: Element, M: Module<T> + ?Sized>(m: &'a M) -> Vec<(String, &'a Param<T>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, e| {
        if let Entry::Param(p) = e {
            out.push((name, p));
        }
    });
    out
}

/// All batch-norm statistics of a module, in visiting order.
pub fn named_stats<'a, T: Element, M: Module<T> + ?Sized>(
    m: &'a M,
) -> Vec<(String, &'a Mutex<BatchNormState<T>>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, e| {
        if let Entry::Stats(s) = e {
            out.push((name, s));
        }
    });
    out
}

/// Number of learned scalars.
pub fn param_count<T: Element, M: Module<T> + ?Sized>(m: &M) -> usize {
    named_params(m).iter().map(|(_, p)| p.numel()).sum()
}

/// Zeroes every convolution weight and bias and resets batch-norm affine
/// parameters to the identity (`γ = 1`, `β = 0`).
pub fn zero_weights<T: Element, M: Module<T> + ?Sized>(m: &M) -> Result<()> {
    for (name, p) in named_params(m) {
        let v = if name.ends_with(".gamma") { T::one() } else { T::zero() };
        p.fill(v)?;
    }
    Ok(())
}
