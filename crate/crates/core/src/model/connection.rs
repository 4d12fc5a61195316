use rand::Rng;

use super::config::{AttentionMode, ModelConfig};
use super::encoder::FeaturePyramid;
use crate::error::Result;
use crate::nn::{scoped, AttentionSpec, Entry, FfnSpec, Module, TransformerBlock};
use crate::profiler::ProfileRow;
use crate::tensor::{adaptive_avg_pool_to, bilinear_upsample, Element, NormMode, Tensor};

/// Token-sharing connection: each local map is pooled to the global token's
/// resolution, refined by a transformer block, and the refinement is
/// upsampled and added back.
#[derive(Clone, Debug)]
pub struct Connection<T: Element> {
    pub mode: AttentionMode,
    pub blocks: Vec<TransformerBlock<T>>,
}

impl<T: Element> Connection<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut blocks = Vec::new();
        if cfg.attention != AttentionMode::Disabled {
            for (n, &c) in cfg.local_channels.iter().enumerate() {
                let kv = match cfg.attention {
                    AttentionMode::Cross => cfg.kv_channels(),
                    _ => c,
                };
                let attn = AttentionSpec {
                    channels: c,
                    kv_channels: kv,
                    heads: cfg.heads[n],
                    qk_dim: cfg.qk_dim,
                    v_dim: cfg.v_dim,
                };
                blocks.push(TransformerBlock::new(attn, FfnSpec::new(c, cfg.ffn_expansion), cfg.norm, rng)?);
            }
        }
        Ok(Self {
            mode: cfg.attention,
            blocks,
        })
    }

    /// `F'_n = F_n + up(block(p_n) − p_n)` with `p_n = pool(F_n)`. A block
    /// that acts as the identity therefore leaves `F_n` exactly unchanged.
    pub fn forward(&self, pyr: &FeaturePyramid<T>, mode: NormMode) -> Result<[Tensor<T>; 3]> {
        if self.mode == AttentionMode::Disabled {
            return Ok(pyr.locals.clone());
        }
        let (_, _, hg, wg) = pyr.global.dims4()?;
        let mut out = Vec::with_capacity(3);
        for (f, block) in pyr.locals.iter().zip(&self.blocks) {
            let (_, _, h, w) = f.dims4()?;
            let pooled = adaptive_avg_pool_to(f, (hg, wg))?;
            let kv = if self.mode == AttentionMode::Cross { &pyr.global } else { &pooled };
            let delta = block.forward(&pooled, kv, mode)?.sub(&pooled)?;
            out.push(f.add(&bilinear_upsample(&delta, (h, w), false)?)?);
        }
        Ok(out.try_into().expect("three levels"))
    }

    pub fn profile(&self, scope: &str, taps: &[[usize; 4]; 4], rows: &mut Vec<ProfileRow>) -> Result<()> {
        let g = taps[3];
        for (n, block) in self.blocks.iter().enumerate() {
            let pooled = [taps[n][0], taps[n][1], g[2], g[3]];
            let kv = if self.mode == AttentionMode::Cross { g } else { pooled };
            block.profile(&scoped(scope, &format!("level{}", n + 1)), pooled, kv, rows)?;
        }
        Ok(())
    }
}

impl<T: Element> Module<T> for Connection<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        for (n, b) in self.blocks.iter().enumerate() {
            b.visit(&scoped(scope, &format!("level{}", n + 1)), f);
        }
    }
}
