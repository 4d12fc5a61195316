//! Encoder, token-sharing connection module and decoder, assembled into the
//! TST and TST-S depth networks.

mod config;
mod connection;
mod decoder;
mod encoder;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{AttentionMode, EncoderSchedule, ModelConfig, StageSpec, StageWidth, Variant};
pub use connection::Connection;
pub use decoder::{Decoder, DecoderLevel, Sff};
pub use encoder::{check_input_size, Encoder, FeaturePyramid, INPUT_MULTIPLE};

use crate::error::Result;
use crate::nn::{scoped, Entry, Module};
use crate::profiler::ProfileRow;
use crate::tensor::{Element, NormMode, Tensor};

#[derive(Clone, Debug)]
pub struct Model<T: Element = f32> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub connection: Connection<T>,
    pub decoder: Decoder<T>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardParts<T: Element> {
    pub pyramid: FeaturePyramid<T>,
    pub fused: [Tensor<T>; 3],
    pub depth: Tensor<T>,
}

impl<T: Element> Model<T> {
    /// Encoder, connection and decoder draw from separate streams of the
    /// seed, so models differing only in attention mode share the encoder and
    /// decoder weights.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Ok(Self {
            config: config.clone(),
            encoder: Encoder::new(config, &mut stream(0))?,
            connection: Connection::new(config, &mut stream(1))?,
            decoder: Decoder::new(config, &mut stream(2))?,
        })
    }

    pub fn forward(&self, image: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        Ok(self.forward_parts(image, mode)?.depth)
    }

    pub fn forward_parts(&self, image: &Tensor<T>, mode: NormMode) -> Result<ForwardParts<T>> {
        let (_, _, h, w) = image.dims4()?;
        let pyramid = self.encoder.forward(image, mode)?;
        let fused = self.connection.forward(&pyramid, mode)?;
        let depth = self.decoder.forward(&fused, &pyramid.global, (h, w), mode)?;
        Ok(ForwardParts { pyramid, fused, depth })
    }

    /// Per-layer parameter and MAC rows for an `N×3×H×W` input.
    pub fn profile(&self, input: [usize; 4]) -> Result<Vec<ProfileRow>> {
        let mut rows = Vec::new();
        let taps = self.encoder.profile("encoder", input, &mut rows)?;
        self.connection.profile("connection", &taps, &mut rows)?;
        self.decoder.profile("decoder", &taps, (input[2], input[3]), &mut rows)?;
        Ok(rows)
    }
}

impl<T: Element> Module<T> for Model<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.encoder.visit(&scoped(scope, "encoder"), f);
        self.connection.visit(&scoped(scope, "connection"), f);
        self.decoder.visit(&scoped(scope, "decoder"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{named_params, param_count, zero_weights};
    use crate::tensor::{adaptive_avg_pool_to, bilinear_upsample, counter::count_macs};
    use rand_chacha::ChaCha8Rng;

    fn image<T: Element>(n: usize, h: usize, w: usize, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform(&[n, 3, h, w], 0.0, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn tst_pyramid_at_64() {
        let m = Model::<f32>::new(&ModelConfig::tst(), 0).unwrap();
        let p = m.encoder.forward(&image(1, 64, 64, 1), NormMode::Eval).unwrap();
        let shapes: Vec<&[usize]> = p.locals.iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, [&[1, 64, 8, 8][..], &[1, 128, 4, 4], &[1, 160, 2, 2]]);
        assert_eq!(p.global.shape(), &[1, 256, 1, 1]);
    }

    #[test]
    fn tst_s_shapes_at_480_by_640() {
        let m = Model::<f32>::new(&ModelConfig::tst_s(), 0).unwrap();
        let taps = m.encoder.profile("", [1, 3, 480, 640], &mut Vec::new()).unwrap();
        assert_eq!(taps, [[1, 48, 60, 80], [1, 96, 30, 40], [1, 128, 15, 20], [1, 256, 8, 10]]);
    }

    #[test]
    fn rejects_indivisible_input() {
        let m = Model::<f32>::new(&ModelConfig::tst_s(), 0).unwrap();
        let err = m.forward(&image(1, 48, 64, 0), NormMode::Eval).unwrap_err();
        assert!(err.to_string().contains("divisible by 32"), "{err}");
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let x = image::<f32>(1, 64, 64, 2);
        let a = Model::<f32>::new(&ModelConfig::tst(), 7).unwrap().forward(&x, NormMode::Eval).unwrap();
        let b = Model::<f32>::new(&ModelConfig::tst(), 7).unwrap().forward(&x, NormMode::Eval).unwrap();
        assert_eq!(a.shape(), &[1, 1, 64, 64]);
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 10.0 && v.is_finite()));
    }

    #[test]
    fn zero_head_gives_half_max_depth() {
        let cfg = ModelConfig::tst_s().with_max_depth(80.0);
        let m = Model::<f32>::new(&cfg, 3).unwrap();
        m.decoder.head.weight.fill(0.0).unwrap();
        let y = m.forward(&image(1, 64, 64, 3), NormMode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 40.0));
    }

    #[test]
    fn disabled_connection_passes_locals_through() {
        let m = Model::<f32>::new(&ModelConfig::tst().with_attention(AttentionMode::Disabled), 0).unwrap();
        let parts = m.forward_parts(&image(1, 64, 64, 4), NormMode::Eval).unwrap();
        for (a, b) in parts.fused.iter().zip(&parts.pyramid.locals) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(param_count(&m.connection), 0);
    }

    #[test]
    fn zero_connection_equals_disabled_model() {
        for mode in [AttentionMode::Cross, AttentionMode::SelfAttention] {
            let m = Model::<f32>::new(&ModelConfig::tst_s().with_attention(mode), 5).unwrap();
            let off = Model::<f32>::new(&ModelConfig::tst_s().with_attention(AttentionMode::Disabled), 5).unwrap();
            zero_weights(&m.connection).unwrap();
            let x = image(2, 64, 96, 5);
            for nm in [NormMode::Eval, NormMode::Train] {
                let parts = m.forward_parts(&x, nm).unwrap();
                for (a, b) in parts.fused.iter().zip(&parts.pyramid.locals) {
                    assert_eq!(a.data(), b.data());
                }
                assert_eq!(parts.depth.data(), off.forward(&x, nm).unwrap().data());
            }
        }
    }

    #[test]
    fn connection_matches_manual_composition() {
        let m = Model::<f64>::new(&ModelConfig::tst(), 6).unwrap();
        let parts = m.forward_parts(&image(1, 128, 64, 6), NormMode::Eval).unwrap();
        let g = &parts.pyramid.global;
        for n in 0..3 {
            let f = &parts.pyramid.locals[n];
            let (_, c, h, w) = f.dims4().unwrap();
            assert_eq!(parts.fused[n].shape(), f.shape());
            let (_, _, hg, wg) = g.dims4().unwrap();
            let p = adaptive_avg_pool_to(f, (hg, wg)).unwrap();
            let block = &m.connection.blocks[n];
            let y = p.add(&block.attn.forward(&p, g, NormMode::Eval).unwrap()).unwrap();
            let z = y.add(&block.ffn.forward(&y, NormMode::Eval).unwrap()).unwrap();
            let want = f.add(&bilinear_upsample(&z.sub(&p).unwrap(), (h, w), false).unwrap()).unwrap();
            assert!(parts.fused[n].max_abs_diff(&want) < 1e-6, "level {n} c={c}");
        }
    }

    #[test]
    fn sff_forced_gates_select_one_input() {
        let m = Model::<f64>::new(&ModelConfig::tst_s(), 8).unwrap();
        let sff = &m.decoder.levels[0].sff;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let local = Tensor::<f64>::randn(&[1, 64, 3, 3], 1.0, &mut rng).unwrap();
        let coarse = Tensor::<f64>::randn(&[1, 64, 3, 3], 1.0, &mut rng).unwrap();
        sff.gates.weight.fill(0.0).unwrap();
        let bias = sff.gates.bias.as_ref().unwrap();
        bias.set(vec![1e3, -1e3]).unwrap();
        assert_eq!(sff.forward(&local, &coarse, NormMode::Eval).unwrap().data(), local.data());
        bias.set(vec![-1e3, 1e3]).unwrap();
        assert_eq!(sff.forward(&local, &coarse, NormMode::Eval).unwrap().data(), coarse.data());
        assert!(sff.forward(&local, &coarse.narrow(1, 0, 32).unwrap(), NormMode::Eval).is_err());
    }

    #[test]
    fn sff_matches_manual_composition() {
        let m = Model::<f64>::new(&ModelConfig::tst_s(), 9).unwrap();
        let sff = &m.decoder.levels[1].sff;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let local = Tensor::<f64>::randn(&[1, 64, 4, 4], 1.0, &mut rng).unwrap();
        let coarse = Tensor::<f64>::randn(&[1, 64, 4, 4], 1.0, &mut rng).unwrap();
        let got = sff.forward(&local, &coarse, NormMode::Eval).unwrap();
        let cat = crate::tensor::concat(&[&local, &coarse], 1).unwrap();
        let h = sff.hidden.forward(&cat, NormMode::Eval).unwrap();
        let a = sff.gates.forward(&h).unwrap().sigmoid();
        for c in 0..64 {
            for p in 0..16 {
                let want = a.data()[p] * local.data()[c * 16 + p] + a.data()[16 + p] * coarse.data()[c * 16 + p];
                assert!((got.data()[c * 16 + p] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = Model::<f32>::new(&ModelConfig::tst(), 0).unwrap();
        let mut names: Vec<String> = named_params(&m).into_iter().map(|(n, _)| n).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
        assert!(names.iter().any(|n| n == "connection.level3.attn.q.bn.gamma"));
    }

    #[test]
    fn analytic_macs_match_counter_on_tiny_model() {
        let mut cfg = ModelConfig::tst_s();
        cfg.decoder_channels = 16;
        cfg.sff_hidden = 16;
        let m = Model::<f32>::new(&cfg, 1).unwrap();
        let x = image::<f32>(1, 64, 64, 1);
        let (_, counted) = count_macs(|| m.forward(&x, NormMode::Eval).unwrap());
        let analytic: u64 = m.profile([1, 3, 64, 64]).unwrap().iter().map(|r| r.macs).sum();
        assert_eq!(analytic, counted);
    }
}
