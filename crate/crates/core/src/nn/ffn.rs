use rand::Rng;

use super::{scoped, Activation, ConvBn, Entry, Module, NormConfig};
use crate::error::{config_err, Result};
use crate::profiler::ProfileRow;
use crate::tensor::{Element, NormMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnSpec {
    pub channels: usize,
    pub hidden: usize,
}

impl FfnSpec {
    pub fn new(channels: usize, expansion: usize) -> Self {
        Self {
            channels,
            hidden: channels * expansion,
        }
    }
}

/// Pointwise expand → depthwise 3×3 → pointwise project, each with BN;
/// ReLU6 after the first two. Output width equals input width.
#[derive(Clone, Debug)]
pub struct Ffn<T: Element> {
    pub spec: FfnSpec,
    pub expand: ConvBn<T>,
    pub depthwise: ConvBn<T>,
    pub project: ConvBn<T>,
}

impl<T: Element> Ffn<T> {
    pub fn new<R: Rng + ?Sized>(spec: FfnSpec, norm: NormConfig, rng: &mut R) -> Result<Self> {
        let FfnSpec { channels, hidden } = spec;
        if channels == 0 || hidden == 0 {
            return Err(config_err(format!("degenerate FFN spec {spec:?}")));
        }
        Ok(Self {
            spec,
            expand: ConvBn::new(channels, hidden, 1, 1, 1, Activation::Relu6, norm, rng)?,
            depthwise: ConvBn::new(hidden, hidden, 3, 1, hidden, Activation::Relu6, norm, rng)?,
            project: ConvBn::new(hidden, channels, 1, 1, 1, Activation::Identity, norm, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.spec.channels {
            return Err(config_err(format!(
                "FFN expects {} channels, got {c}",
                self.spec.channels
            )));
        }
        let h = self.expand.forward(x, mode)?;
        let h = self.depthwise.forward(&h, mode)?;
        self.project.forward(&h, mode)
    }

    pub fn profile(&self, scope: &str, input: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<[usize; 4]> {
        let s = self.expand.profile(&scoped(scope, "expand"), input, rows)?;
        let s = self.depthwise.profile(&scoped(scope, "depthwise"), s, rows)?;
        self.project.profile(&scoped(scope, "project"), s, rows)
    }
}

impl<T: Element> Module<T> for Ffn<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.expand.visit(&scoped(scope, "expand"), f);
        self.depthwise.visit(&scoped(scope, "depthwise"), f);
        self.project.visit(&scoped(scope, "project"), f);
    }
}
