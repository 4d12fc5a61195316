use rand::Rng;

use super::config::ModelConfig;
use crate::error::{usage_err, Result};
use crate::nn::{scoped, Activation, Conv2d, ConvBn, Entry, Module};
use crate::profiler::ProfileRow;
use crate::tensor::{bilinear_upsample, concat, lit, Element, NormMode, Tensor};

/// Selective feature fusion: two sigmoid gates computed from both inputs
/// weight the local and coarse maps.
#[derive(Clone, Debug)]
pub struct Sff<T: Element> {
    pub hidden: ConvBn<T>,
    pub gates: Conv2d<T>,
}

impl<T: Element> Sff<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.decoder_channels;
        Ok(Self {
            hidden: ConvBn::new(2 * d, cfg.sff_hidden, 3, 1, 1, Activation::Relu6, cfg.norm, rng)?,
            gates: Conv2d::new(cfg.sff_hidden, 2, 3, 1, 1, true, rng)?,
        })
    }

    /// Gate maps `[N, 2, h, w]`: channel 0 weights `local`, channel 1 `coarse`.
    pub fn gate_maps(&self, local: &Tensor<T>, coarse: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        if local.shape() != coarse.shape() {
            return Err(usage_err(format!(
                "fusion inputs differ in shape: {:?} vs {:?}",
                local.shape(),
                coarse.shape()
            )));
        }
        let h = self.hidden.forward(&concat(&[local, coarse], 1)?, mode)?;
        Ok(self.gates.forward(&h)?.sigmoid())
    }

    pub fn forward(&self, local: &Tensor<T>, coarse: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let a = self.gate_maps(local, coarse, mode)?;
        local.mul(&a.narrow(1, 0, 1)?)?.add(&coarse.mul(&a.narrow(1, 1, 1)?)?)
    }

    fn profile(&self, scope: &str, s: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<()> {
        let h = self.hidden.profile(&scoped(scope, "hidden"), [s[0], 2 * s[1], s[2], s[3]], rows)?;
        self.gates.profile(&scoped(scope, "gates"), h, rows)?;
        Ok(())
    }
}

impl<T: Element> Module<T> for Sff<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.hidden.visit(&scoped(scope, "hidden"), f);
        self.gates.visit(&scoped(scope, "gates"), f);
    }
}

/// One coarse-to-fine step of the decoder.
#[derive(Clone, Debug)]
pub struct DecoderLevel<T: Element> {
    pub skip: ConvBn<T>,
    pub sff: Sff<T>,
    pub fuse: ConvBn<T>,
}

#[derive(Clone, Debug)]
pub struct Decoder<T: Element> {
    pub entry: ConvBn<T>,
    /// Ordered coarse to fine (level 3 first).
    pub levels: Vec<DecoderLevel<T>>,
    pub head: Conv2d<T>,
    pub max_depth: f64,
}

impl<T: Element> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.decoder_channels;
        let entry = ConvBn::new(cfg.kv_channels(), d, 1, 1, 1, Activation::Relu6, cfg.norm, rng)?;
        let mut levels = Vec::new();
        for &c in cfg.local_channels.iter().rev() {
            levels.push(DecoderLevel {
                skip: ConvBn::new(c, d, 1, 1, 1, Activation::Relu6, cfg.norm, rng)?,
                sff: Sff::new(cfg, rng)?,
                fuse: ConvBn::new(d, d, 3, 1, 1, Activation::Relu6, cfg.norm, rng)?,
            });
        }
        let head = Conv2d::new(d, 1, 3, 1, 1, true, rng)?;
        Ok(Self {
            entry,
            levels,
            head,
            max_depth: cfg.max_depth,
        })
    }

    /// Depth in `(0, max_depth)` at `out_size`.
    pub fn forward(
        &self,
        fused: &[Tensor<T>; 3],
        global: &Tensor<T>,
        out_size: (usize, usize),
        mode: NormMode,
    ) -> Result<Tensor<T>> {
        let mut x = self.entry.forward(global, mode)?;
        for (level, f) in self.levels.iter().zip(fused.iter().rev()) {
            let (_, _, h, w) = f.dims4()?;
            let coarse = bilinear_upsample(&x, (h, w), false)?;
            let local = level.skip.forward(f, mode)?;
            x = level.fuse.forward(&level.sff.forward(&local, &coarse, mode)?, mode)?;
        }
        let x = bilinear_upsample(&x, out_size, false)?;
        Ok(self.head.forward(&x)?.sigmoid().mul_scalar(lit(self.max_depth)))
    }

    pub fn profile(&self, scope: &str, taps: &[[usize; 4]; 4], out_size: (usize, usize), rows: &mut Vec<ProfileRow>) -> Result<()> {
        let mut s = self.entry.profile(&scoped(scope, "entry"), taps[3], rows)?;
        for (i, level) in self.levels.iter().enumerate() {
            let n = 3 - i;
            let lscope = scoped(scope, &format!("level{n}"));
            let local = level.skip.profile(&scoped(&lscope, "skip"), taps[n - 1], rows)?;
            level.sff.profile(&scoped(&lscope, "sff"), local, rows)?;
            s = level.fuse.profile(&scoped(&lscope, "fuse"), local, rows)?;
        }
        self.head.profile(&scoped(scope, "head"), [s[0], s[1], out_size.0, out_size.1], rows)?;
        Ok(())
    }
}

impl<T: Element> Module<T> for Decoder<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.entry.visit(&scoped(scope, "entry"), f);
        for (i, level) in self.levels.iter().enumerate() {
            let lscope = scoped(scope, &format!("level{}", 3 - i));
            level.skip.visit(&scoped(&lscope, "skip"), f);
            level.sff.visit(&scoped(&lscope, "sff"), f);
            level.fuse.visit(&scoped(&lscope, "fuse"), f);
        }
        self.head.visit(&scoped(scope, "head"), f);
    }
}
