use rand::Rng;

use super::config::{EncoderSchedule, ModelConfig, StageWidth};
use crate::error::{config_err, Result};
use crate::nn::{scoped, Activation, ConvBn, Entry, InvertedResidual, InvertedResidualSpec, Module};
use crate::profiler::ProfileRow;
use crate::tensor::{Element, NormMode, Tensor};

/// Inputs must tile evenly into the stride-32 grid.
pub const INPUT_MULTIPLE: usize = 32;

/// Encoder outputs: three local maps (strides 8, 16, 32) and the shared global token.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T: Element> {
    pub locals: [Tensor<T>; 3],
    pub global: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Encoder<T: Element> {
    pub stem: ConvBn<T>,
    pub stages: Vec<Vec<InvertedResidual<T>>>,
    widths: Vec<StageWidth>,
}

pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h < INPUT_MULTIPLE || w < INPUT_MULTIPLE || h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
        return Err(config_err(format!(
            "input {h}×{w} must have both sides divisible by {INPUT_MULTIPLE} (and at least {INPUT_MULTIPLE})"
        )));
    }
    Ok(())
}

impl<T: Element> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let sched: &EncoderSchedule = &cfg.encoder;
        let stem = ConvBn::new(3, sched.stem_channels, 3, 2, 1, Activation::Relu6, cfg.norm, rng)?;
        let mut cin = sched.stem_channels;
        let mut stages = Vec::new();
        for st in &sched.stages {
            let cout = cfg.stage_channels(st.width);
            let mut blocks = Vec::new();
            for b in 0..st.blocks {
                let mut spec = InvertedResidualSpec::new(cin, cout, st.expansion, if b == 0 { 2 } else { 1 });
                spec.kernel = st.kernel;
                blocks.push(InvertedResidual::new(spec, cfg.norm, rng)?);
                cin = cout;
            }
            stages.push(blocks);
        }
        Ok(Self {
            stem,
            stages,
            widths: sched.stages.iter().map(|s| s.width).collect(),
        })
    }

    pub fn forward(&self, image: &Tensor<T>, mode: NormMode) -> Result<FeaturePyramid<T>> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 {
            return Err(config_err(format!("encoder expects 3 input channels, got {c}")));
        }
        check_input_size(h, w)?;
        let mut x = self.stem.forward(image, mode)?;
        let mut locals: [Option<Tensor<T>>; 3] = Default::default();
        let mut global = None;
        for (blocks, width) in self.stages.iter().zip(&self.widths) {
            for b in blocks {
                x = b.forward(&x, mode)?;
            }
            match width {
                StageWidth::Local(i) => locals[*i] = Some(x.clone()),
                StageWidth::Global => global = Some(x.clone()),
                StageWidth::Fixed(_) => {}
            }
        }
        let [f1, f2, f3] = locals.map(|l| l.expect("validated schedule taps every level"));
        let global = global.unwrap_or_else(|| f3.clone());
        Ok(FeaturePyramid {
            locals: [f1, f2, f3],
            global,
        })
    }

    /// Returns the pyramid shapes `[F1, F2, F3, global]`.
    pub fn profile(&self, scope: &str, input: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<[[usize; 4]; 4]> {
        check_input_size(input[2], input[3])?;
        let mut s = self.stem.profile(&scoped(scope, "stem"), input, rows)?;
        let mut taps = [[0; 4]; 4];
        for (i, (blocks, width)) in self.stages.iter().zip(&self.widths).enumerate() {
            for (j, b) in blocks.iter().enumerate() {
                s = b.profile(&scoped(scope, &format!("stage{i}.{j}")), s, rows)?;
            }
            match width {
                StageWidth::Local(l) => taps[*l] = s,
                StageWidth::Global => taps[3] = s,
                StageWidth::Fixed(_) => {}
            }
        }
        if taps[3] == [0; 4] {
            taps[3] = taps[2];
        }
        Ok(taps)
    }
}

impl<T: Element> Module<T> for Encoder<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.stem.visit(&scoped(scope, "stem"), f);
        for (i, blocks) in self.stages.iter().enumerate() {
            for (j, b) in blocks.iter().enumerate() {
                b.visit(&scoped(scope, &format!("stage{i}.{j}")), f);
            }
        }
    }
}
