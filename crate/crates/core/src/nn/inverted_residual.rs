use rand::Rng;

use super::{scoped, Activation, ConvBn, Entry, Module, NormConfig};
use crate::error::{config_err, Result};
use crate::profiler::ProfileRow;
use crate::tensor::{Element, NormMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InvertedResidualSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub kernel: usize,
}

impl InvertedResidualSpec {
    pub fn new(in_channels: usize, out_channels: usize, expansion: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            expansion,
            stride,
            kernel: 3,
        }
    }

    pub fn has_shortcut(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn hidden(&self) -> usize {
        self.in_channels * self.expansion
    }

    fn validate(&self) -> Result<()> {
        if self.expansion == 0 || !matches!(self.stride, 1 | 2) || self.kernel % 2 == 0 {
            return Err(config_err(format!("invalid inverted residual spec {self:?}")));
        }
        Ok(())
    }
}

/// Expand (1×1) → depthwise k×k → project (1×1), each followed by BN; ReLU6
/// after the first two. The expand stage is omitted when `expansion == 1`.
#[derive(Clone, Debug)]
pub struct InvertedResidual<T: Element> {
    pub spec: InvertedResidualSpec,
    pub expand: Option<ConvBn<T>>,
    pub depthwise: ConvBn<T>,
    pub project: ConvBn<T>,
}

impl<T: Element> InvertedResidual<T> {
    pub fn new<R: Rng + ?Sized>(spec: InvertedResidualSpec, norm: NormConfig, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let hidden = spec.hidden();
        let expand = if spec.expansion == 1 {
            None
        } else {
            Some(ConvBn::new(spec.in_channels, hidden, 1, 1, 1, Activation::Relu6, norm, rng)?)
        };
        Ok(Self {
            spec,
            expand,
            depthwise: ConvBn::new(hidden, hidden, spec.kernel, spec.stride, hidden, Activation::Relu6, norm, rng)?,
            project: ConvBn::new(hidden, spec.out_channels, 1, 1, 1, Activation::Identity, norm, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.spec.in_channels {
            return Err(config_err(format!(
                "inverted residual expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let mut h = match &self.expand {
            Some(e) => e.forward(x, mode)?,
            None => x.clone(),
        };
        h = self.depthwise.forward(&h, mode)?;
        h = self.project.forward(&h, mode)?;
        if self.spec.has_shortcut() {
            h = h.add(x)?;
        }
        Ok(h)
    }

    pub fn profile(&self, scope: &str, input: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<[usize; 4]> {
        let mut s = input;
        if let Some(e) = &self.expand {
            s = e.profile(&scoped(scope, "expand"), s, rows)?;
        }
        s = self.depthwise.profile(&scoped(scope, "depthwise"), s, rows)?;
        self.project.profile(&scoped(scope, "project"), s, rows)
    }
}

impl<T: Element> Module<T> for InvertedResidual<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        if let Some(e) = &self.expand {
            e.visit(&scoped(scope, "expand"), f);
        }
        self.depthwise.visit(&scoped(scope, "depthwise"), f);
        self.project.visit(&scoped(scope, "project"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zero_weights;
    use crate::tensor::{batch_norm2d, conv2d, BatchNormState, Conv2dOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_branch_leaves_shortcut() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = InvertedResidual::<f64>::new(InvertedResidualSpec::new(8, 8, 4, 1), NormConfig::default(), &mut rng).unwrap();
        zero_weights(&block).unwrap();
        let x = Tensor::<f64>::randn(&[2, 8, 6, 6], 1.0, &mut rng).unwrap();
        for mode in [NormMode::Eval, NormMode::Train] {
            assert_eq!(block.forward(&x, mode).unwrap().data(), x.data());
        }
    }

    #[test]
    fn stride_two_halves_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = InvertedResidual::<f32>::new(InvertedResidualSpec::new(16, 24, 4, 2), NormConfig::default(), &mut rng).unwrap();
        let x = Tensor::<f32>::randn(&[1, 16, 32, 32], 1.0, &mut rng).unwrap();
        assert_eq!(block.forward(&x, NormMode::Eval).unwrap().shape(), &[1, 24, 16, 16]);
        assert!(!block.spec.has_shortcut());
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = InvertedResidual::<f32>::new(InvertedResidualSpec::new(16, 24, 4, 1), NormConfig::default(), &mut rng).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 8, 4, 4]).unwrap();
        assert!(matches!(block.forward(&x, NormMode::Eval), Err(crate::Error::Config(_))));
    }

    #[test]
    fn matches_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = InvertedResidual::<f64>::new(InvertedResidualSpec::new(16, 24, 4, 1), NormConfig::default(), &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&[1, 16, 8, 8], 1.0, &mut rng).unwrap();
        let got = block.forward(&x, NormMode::Train).unwrap();

        let stage = |x: &Tensor<f64>, cb: &ConvBn<f64>, groups: usize, relu: bool| {
            let y = conv2d(x, &cb.conv.weight.get(), None, Conv2dOptions::new(1, cb.conv.kernel / 2, groups)).unwrap();
            let mut st = BatchNormState::new(y.shape()[1]);
            let z = batch_norm2d(&y, &cb.bn.gamma.get(), &cb.bn.beta.get(), &mut st, NormMode::Train, 0.1, 1e-5).unwrap();
            if relu {
                z.relu6()
            } else {
                z
            }
        };
        let h = stage(&x, block.expand.as_ref().unwrap(), 1, true);
        let h = stage(&h, &block.depthwise, 64, true);
        let want = stage(&h, &block.project, 1, false);
        assert_eq!(got.shape(), &[1, 24, 8, 8]);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }
}
