use rand::Rng;

use super::{scoped, AttentionSpec, CrossAttention, Entry, Ffn, FfnSpec, Module, NormConfig};
use crate::error::Result;
use crate::profiler::ProfileRow;
use crate::tensor::{Element, NormMode, Tensor};

/// `y = x + attn(x, g)`, `z = y + ffn(y)` at the pooled token resolution.
#[derive(Clone, Debug)]
pub struct TransformerBlock<T: Element> {
    pub attn: CrossAttention<T>,
    pub ffn: Ffn<T>,
}

impl<T: Element> TransformerBlock<T> {
    pub fn new<R: Rng + ?Sized>(attn: AttentionSpec, ffn: FfnSpec, norm: NormConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            attn: CrossAttention::new(attn, norm, rng)?,
            ffn: Ffn::new(ffn, norm, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, kv: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let y = x.add(&self.attn.forward(x, kv, mode)?)?;
        y.add(&self.ffn.forward(&y, mode)?)
    }

    pub fn profile(&self, scope: &str, x: [usize; 4], kv: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<()> {
        self.attn.profile(&scoped(scope, "attn"), x, kv, rows)?;
        self.ffn.profile(&scoped(scope, "ffn"), x, rows)?;
        Ok(())
    }
}

impl<T: Element> Module<T> for TransformerBlock<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.attn.visit(&scoped(scope, "attn"), f);
        self.ffn.visit(&scoped(scope, "ffn"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zero_weights;
    use crate::tensor::counter::count_macs;
    use crate::tensor::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block<T: Element>(c: usize, cg: usize, seed: u64) -> (TransformerBlock<T>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = TransformerBlock::new(AttentionSpec::new(c, cg, 32), FfnSpec::new(c, 2), NormConfig::default(), &mut rng)
            .unwrap();
        (b, rng)
    }

    #[test]
    fn zero_block_is_identity() {
        for c in [64, 128, 160] {
            let (b, mut rng) = block::<f32>(c, 256, c as u64);
            zero_weights(&b).unwrap();
            let x = Tensor::randn(&[2, c, 2, 3], 1.0, &mut rng).unwrap();
            let g = Tensor::randn(&[2, 256, 2, 3], 1.0, &mut rng).unwrap();
            for mode in [NormMode::Eval, NormMode::Train] {
                assert_eq!(b.forward(&x, &g, mode).unwrap().data(), x.data());
            }
        }
    }

    #[test]
    fn matches_sequential_composition() {
        let (b, mut rng) = block::<f64>(32, 48, 4);
        let x = Tensor::randn(&[1, 32, 3, 3], 1.0, &mut rng).unwrap();
        let g = Tensor::randn(&[1, 48, 3, 3], 1.0, &mut rng).unwrap();
        let got = b.forward(&x, &g, NormMode::Eval).unwrap();
        let y = x.add(&b.attn.forward(&x, &g, NormMode::Eval).unwrap()).unwrap();
        let want = y.add(&b.ffn.forward(&y, NormMode::Eval).unwrap()).unwrap();
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn analytic_macs_match_counter_at_four_by_four() {
        let (b, mut rng) = block::<f32>(64, 256, 5);
        let x = Tensor::randn(&[1, 64, 4, 4], 1.0, &mut rng).unwrap();
        let g = Tensor::randn(&[1, 256, 4, 4], 1.0, &mut rng).unwrap();
        let (_, counted) = count_macs(|| b.forward(&x, &g, NormMode::Eval).unwrap());
        let mut rows = Vec::new();
        b.profile("", [1, 64, 4, 4], [1, 256, 4, 4], &mut rows).unwrap();
        assert_eq!(rows.iter().map(|r| r.macs).sum::<u64>(), counted);
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let (b, mut rng) = block::<f64>(32, 16, 6);
        let x = Tensor::randn(&[2, 32, 2, 2], 1.0, &mut rng).unwrap();
        let g = Tensor::randn(&[2, 16, 2, 2], 1.0, &mut rng).unwrap();
        let w = Tensor::randn(&[2, 32, 2, 2], 1.0, &mut rng).unwrap();
        let report = check_gradients(
            &[x, g],
            |v| b.forward(&v[0], &v[1], NormMode::Eval)?.mul(&w).map(|t| t.sum()),
            1e-5,
            24,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }
}
