use std::sync::Mutex;

use rand::Rng;

use super::{scoped, Entry, Module, Param};
use crate::error::Result;
use crate::profiler::ProfileRow;
use crate::tensor::{
    batch_norm2d, conv2d, conv_output_size, BatchNormState, Conv2dOptions, Element, NormMode, Tensor,
};

/// Square-kernel convolution with "same"-style padding `k / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Element> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub opts: Conv2dOptions,
}

impl<T: Element> Conv2d<T> {
    /// He (fan-in) normal initialisation, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = [out_channels, in_channels / groups.max(1), kernel, kernel];
        let fan_in = (shape[1] * kernel * kernel) as f64;
        let w = Tensor::<T>::randn(&shape, (2.0 / fan_in).sqrt(), rng)?;
        let bias = if bias { Some(Param::zeros(&[out_channels])?) } else { None };
        Ok(Self {
            weight: Param::new(w.to_vec(), &shape)?,
            bias,
            in_channels,
            out_channels,
            kernel,
            opts: Conv2dOptions::new(stride, kernel / 2, groups),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.bias.as_ref().map(Param::get);
        conv2d(x, &self.weight.get(), b.as_ref(), self.opts)
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, _, h, w] = input;
        let oh = conv_output_size(h, self.kernel, self.opts.stride, self.opts.padding)?;
        let ow = conv_output_size(w, self.kernel, self.opts.stride, self.opts.padding)?;
        Ok([n, self.out_channels, oh, ow])
    }

    /// `Kh·Kw·(Cin/groups)·Cout·H'·W'` per batch element.
    pub fn macs(&self, input: [usize; 4]) -> Result<u64> {
        let [n, c, oh, ow] = self.output_shape(input)?;
        let per_out = self.kernel * self.kernel * (self.in_channels / self.opts.groups);
        Ok((n * c * oh * ow * per_out) as u64)
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Param::numel)
    }

    pub fn profile(&self, scope: &str, input: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<[usize; 4]> {
        let kind = if self.opts.groups > 1 { "dwconv" } else { "conv" };
        rows.push(ProfileRow::new(scope, kind, self.param_count(), self.macs(input)?));
        self.output_shape(input)
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        f(scoped(scope, "weight"), Entry::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(scoped(scope, "bias"), Entry::Param(b));
        }
    }
}

#[derive(Debug)]
pub struct BatchNorm2d<T: Element> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub state: Mutex<BatchNormState<T>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Element> Clone for BatchNorm2d<T> {
    fn clone(&self) -> Self {
        Self {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            state: Mutex::new(self.state.lock().expect("bn state poisoned").clone()),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: Param::new(vec![T::one(); channels], &[channels])?,
            beta: Param::zeros(&[channels])?,
            state: Mutex::new(BatchNormState::new(channels)),
            momentum,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut state = self.state.lock().expect("bn state poisoned");
        batch_norm2d(x, &self.gamma.get(), &self.beta.get(), &mut state, mode, self.momentum, self.eps)
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }
}

impl<T: Element> Module<T> for BatchNorm2d<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        f(scoped(scope, "gamma"), Entry::Param(&self.gamma));
        f(scoped(scope, "beta"), Entry::Param(&self.beta));
        f(scoped(scope, "stats"), Entry::Stats(&self.state));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu6,
}

/// Convolution → batch norm → optional ReLU6. Convs feeding a norm carry no bias.
#[derive(Clone, Debug)]
pub struct ConvBn<T: Element> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub act: Activation,
}

/// Batch-norm momentum and epsilon shared by every block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

impl<T: Element> ConvBn<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        act: Activation,
        norm: NormConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(in_channels, out_channels, kernel, stride, groups, false, rng)?,
            bn: BatchNorm2d::new(out_channels, norm.momentum, norm.eps)?,
            act,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let y = self.bn.forward(&self.conv.forward(x)?, mode)?;
        Ok(match self.act {
            Activation::Identity => y,
            Activation::Relu6 => y.relu6(),
        })
    }

    pub fn profile(&self, scope: &str, input: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<[usize; 4]> {
        let out = self.conv.profile(&scoped(scope, "conv"), input, rows)?;
        rows.push(ProfileRow::new(&scoped(scope, "bn"), "batchnorm", self.bn.param_count(), 0));
        Ok(out)
    }
}

impl<T: Element> Module<T> for ConvBn<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.conv.visit(&scoped(scope, "conv"), f);
        self.bn.visit(&scoped(scope, "bn"), f);
    }
}
