use rand::Rng;

use super::DepthSample;
use crate::error::{config_err, usage_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_hflip: f64,
    pub p_color: f64,
    pub p_cutdepth: f64,
    /// Output `(height, width)`; `None` keeps the full sample.
    pub crop: Option<(usize, usize)>,
    /// Range of the brightness, contrast, gamma and per-channel factors.
    pub color_range: (f32, f32),
    /// CutDepth strip width as a fraction of the output width.
    pub cutdepth_width: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_hflip: 0.5,
            p_color: 0.5,
            p_cutdepth: 0.25,
            crop: None,
            color_range: (0.75, 1.25),
            cutdepth_width: (0.25, 0.75),
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn identity() -> Self {
        Self {
            p_hflip: 0.0,
            p_color: 0.0,
            p_cutdepth: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_hflip, self.p_color, self.p_cutdepth];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(config_err(format!("augmentation probabilities must lie in [0, 1], got {probs:?}")));
        }
        let (lo, hi) = self.color_range;
        let (wlo, whi) = self.cutdepth_width;
        if !(lo > 0.0 && lo <= hi) || !(wlo > 0.0 && wlo <= whi && whi <= 1.0) {
            return Err(config_err("augmentation ranges must be positive and ordered"));
        }
        Ok(())
    }
}

/// Colour factors applied as `clamp(((x·b − μ)·c + μ), 0, 1)^γ · k_ch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorJitter {
    pub brightness: f32,
    pub contrast: f32,
    pub gamma: f32,
    pub channel: [f32; 3],
}

/// What [`augment_traced`] did.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AugmentTrace {
    /// Top-left corner of the crop.
    pub crop_origin: (usize, usize),
    pub flipped: bool,
    pub color: Option<ColorJitter>,
    /// `(first column, width)` of the CutDepth strip.
    pub cutdepth: Option<(usize, usize)>,
}

pub fn augment<R: Rng + ?Sized>(sample: &DepthSample, rng: &mut R, cfg: &AugmentConfig) -> Result<DepthSample> {
    Ok(augment_traced(sample, rng, cfg)?.0)
}

/// Crop, then horizontal flip, then colour jitter (RGB only), then vertical
/// CutDepth (RGB only). Depth and mask follow the same geometric map as RGB.
pub fn augment_traced<R: Rng + ?Sized>(
    sample: &DepthSample,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<(DepthSample, AugmentTrace)> {
    cfg.validate()?;
    let (h, w) = (sample.height(), sample.width());
    let (ch, cw) = cfg.crop.unwrap_or((h, w));
    if ch == 0 || cw == 0 || ch > h || cw > w {
        return Err(usage_err(format!("crop {ch}×{cw} does not fit a {h}×{w} sample")));
    }
    let mut trace = AugmentTrace {
        crop_origin: (rng.random_range(0..=h - ch), rng.random_range(0..=w - cw)),
        ..Default::default()
    };
    trace.flipped = rng.random_bool(cfg.p_hflip);
    let (r0, c0) = trace.crop_origin;
    let src_col = |c: usize| if trace.flipped { c0 + cw - 1 - c } else { c0 + c };

    let mut rgb = vec![0f32; 3 * ch * cw];
    let mut depth = vec![0f32; ch * cw];
    let mut mask = vec![false; ch * cw];
    let (srgb, sdepth) = (sample.rgb.data(), sample.depth.data());
    for r in 0..ch {
        for c in 0..cw {
            let src = (r0 + r) * w + src_col(c);
            depth[r * cw + c] = sdepth[src];
            mask[r * cw + c] = sample.mask[src];
            for k in 0..3 {
                rgb[k * ch * cw + r * cw + c] = srgb[k * h * w + src];
            }
        }
    }

    if rng.random_bool(cfg.p_color) {
        let (lo, hi) = cfg.color_range;
        let mut f = || rng.random_range(lo..=hi);
        let jitter = ColorJitter {
            brightness: f(),
            contrast: f(),
            gamma: f(),
            channel: [f(), f(), f()],
        };
        let mean = rgb.iter().sum::<f32>() / rgb.len() as f32 * jitter.brightness;
        for (k, plane) in rgb.chunks_mut(ch * cw).enumerate() {
            for v in plane {
                let x = ((*v * jitter.brightness - mean) * jitter.contrast + mean).clamp(0.0, 1.0);
                *v = (x.powf(jitter.gamma) * jitter.channel[k]).clamp(0.0, 1.0);
            }
        }
        trace.color = Some(jitter);
    }

    if rng.random_bool(cfg.p_cutdepth) {
        let (lo, hi) = cfg.cutdepth_width;
        let width = ((rng.random_range(lo..=hi) * cw as f64).round() as usize).clamp(1, cw);
        let start = rng.random_range(0..=cw - width);
        let peak = depth
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .fold(0f32, f32::max);
        if peak > 0.0 {
            for r in 0..ch {
                for c in start..start + width {
                    let v = if mask[r * cw + c] { depth[r * cw + c] / peak } else { 0.0 };
                    for k in 0..3 {
                        rgb[k * ch * cw + r * cw + c] = v;
                    }
                }
            }
            trace.cutdepth = Some((start, width));
        }
    }

    let out = DepthSample::new(
        Tensor::new(rgb, &[3, ch, cw])?,
        Tensor::new(depth, &[1, ch, cw])?,
        mask,
    )?;
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forced(p_hflip: f64, p_color: f64, p_cutdepth: f64) -> AugmentConfig {
        AugmentConfig {
            p_hflip,
            p_color,
            p_cutdepth,
            ..AugmentConfig::default()
        }
    }

    #[test]
    fn zero_probabilities_full_crop_is_identity() {
        let s = synth_scene(1, 64, 80, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&s, &mut rng, &AugmentConfig::identity()).unwrap(), s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = synth_scene(2, 64, 64, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = forced(1.0, 0.0, 0.0);
        let once = augment(&s, &mut rng, &cfg).unwrap();
        assert_ne!(once, s);
        assert_eq!(once.depth.data()[5], s.depth.data()[63 - 5]);
        assert_eq!(augment(&once, &mut rng, &cfg).unwrap(), s);
    }

    #[test]
    fn cutdepth_region_holds_normalized_depth() {
        let s = synth_scene(3, 64, 64, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (out, trace) = augment_traced(&s, &mut rng, &forced(0.0, 0.0, 1.0)).unwrap();
        let (start, width) = trace.cutdepth.unwrap();
        assert!((16..=48).contains(&width));
        assert_eq!(out.depth, s.depth);
        assert_eq!(out.mask, s.mask);
        let peak = s.depth.data().iter().cloned().fold(0f32, f32::max);
        for k in 0..3 {
            for r in 0..64 {
                for c in 0..64 {
                    let i = k * 4096 + r * 64 + c;
                    let want = if (start..start + width).contains(&c) {
                        s.depth.data()[r * 64 + c] / peak
                    } else {
                        s.rgb.data()[i]
                    };
                    assert_eq!(out.rgb.data()[i], want);
                }
            }
        }
    }

    #[test]
    fn crop_moves_all_maps_together() {
        let s = synth_scene(4, 96, 128, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AugmentConfig {
            crop: Some((64, 64)),
            ..forced(1.0, 1.0, 0.0)
        };
        let (out, trace) = augment_traced(&s, &mut rng, &cfg).unwrap();
        let (r0, c0) = trace.crop_origin;
        assert_eq!(out.depth.shape(), &[1, 64, 64]);
        for r in 0..64 {
            for c in 0..64 {
                assert_eq!(out.depth.data()[r * 64 + c], s.depth.data()[(r0 + r) * 128 + c0 + 63 - c]);
            }
        }
        assert!(out.rgb.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let too_big = AugmentConfig { crop: Some((128, 64)), ..cfg };
        assert!(matches!(augment(&s, &mut rng, &too_big), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn empirical_rates_match_probabilities() {
        let s = synth_scene(5, 64, 64, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = AugmentConfig::default();
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let (_, t) = augment_traced(&s, &mut rng, &cfg).unwrap();
            counts[0] += t.flipped as usize;
            counts[1] += t.color.is_some() as usize;
            counts[2] += t.cutdepth.is_some() as usize;
        }
        for (count, p) in counts.iter().zip([0.5, 0.5, 0.25]) {
            let rate = *count as f64 / draws as f64;
            assert!((rate - p).abs() <= 0.03, "rate {rate} vs {p}");
        }
    }
}
