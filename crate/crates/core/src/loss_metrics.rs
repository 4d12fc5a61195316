//! Scale-invariant log loss and depth evaluation metrics.

use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::tensor::{bilinear_upsample, lit, no_grad, Element, Tensor};

pub const DEFAULT_LAMBDA: f64 = 0.85;
pub const DEFAULT_ALPHA: f64 = 10.0;

fn masked_indices(mask: &[bool], numel: usize) -> Result<Vec<usize>> {
    if mask.len() != numel {
        return Err(config_err(format!(
            "mask has {} entries for {numel} pixels",
            mask.len()
        )));
    }
    let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(Error::Evaluation("no valid pixels under the mask".into()));
    }
    Ok(idx)
}

/// `α·sqrt(mean(d²) − λ·mean(d)²)` with `d = log pred − log gt` over masked
/// pixels, returned as a `[1]` tensor differentiable in `pred`.
///
/// Evaluated as `α·sqrt(var(d) + (1 − λ)·mean(d)²)` in 64-bit, which is the
/// same quantity but does not cancel catastrophically near `λ = 1`.
pub fn silog_loss<T: Element>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    mask: &[bool],
    lambda: f64,
    alpha: f64,
) -> Result<Tensor<T>> {
    if pred.shape() != gt.shape() {
        return Err(config_err(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.shape(),
            gt.shape()
        )));
    }
    let idx = masked_indices(mask, pred.numel())?;
    let (p, g) = (pred.data(), gt.data());
    let mut d = Vec::with_capacity(idx.len());
    for &i in &idx {
        let (pi, gi) = (p[i].as_f64(), g[i].as_f64());
        if !(pi > 0.0 && gi > 0.0) {
            return Err(Error::Domain(format!(
                "log-depth needs positive values, got pred {pi} and gt {gi} at pixel {i}"
            )));
        }
        d.push(pi.ln() - gi.ln());
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = (var + (1.0 - lambda) * mean * mean).max(0.0);
    let root = s.sqrt();
    let numel = pred.numel();
    let p_f64: Vec<f64> = idx.iter().map(|&i| p[i].as_f64()).collect();
    Ok(Tensor::from_op(vec![1], vec![lit(alpha * root)], "silog", &[pred], move |_, gout| {
        let mut gp = vec![T::zero(); numel];
        if root > 0.0 {
            // ∂S/∂d_i = 2(d_i − λ·mean)/n, ∂d_i/∂pred_i = 1/pred_i
            let scale = gout[0].as_f64() * alpha / (2.0 * root);
            for ((&i, &di), &pi) in idx.iter().zip(&d).zip(&p_f64) {
                gp[i] = lit(scale * 2.0 * (di - lambda * mean) / n / pi);
            }
        }
        vec![Some(gp)]
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
}

pub const METRICS_CSV_HEADER: &str = "variant,delta1,delta2,delta3,abs_rel,sq_rel,rmse";

impl Metrics {
    pub fn to_csv_row(&self, variant: &str) -> String {
        format!(
            "{variant},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.delta1, self.delta2, self.delta3, self.abs_rel, self.sq_rel, self.rmse
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Crop {
    None,
    Eigen,
}

impl FromStr for Crop {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Crop::None),
            "eigen" => Ok(Crop::Eigen),
            other => Err(config_err(format!("unknown crop `{other}` (none or eigen)"))),
        }
    }
}

impl fmt::Display for Crop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Crop::None => "none",
            Crop::Eigen => "eigen",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProtocol {
    pub upsample_pred_to_gt: bool,
    pub crop: Crop,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl EvalProtocol {
    pub fn new(max_depth: f64) -> Self {
        Self {
            upsample_pred_to_gt: true,
            crop: Crop::None,
            min_depth: 1e-3,
            max_depth,
        }
    }

    pub fn indoor() -> Self {
        Self::new(10.0)
    }

    pub fn outdoor() -> Self {
        Self::new(80.0)
    }

    pub fn with_crop(mut self, crop: Crop) -> Self {
        self.crop = crop;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.max_depth > self.min_depth) {
            return Err(config_err(format!(
                "evaluation needs 0 < min_depth < max_depth, got {} and {}",
                self.min_depth, self.max_depth
            )));
        }
        Ok(())
    }
}

/// Half-open `(row0, row1, col0, col1)` rectangle of the conventional KITTI
/// evaluation crop, boundaries floored.
pub fn eigen_crop(height: usize, width: usize) -> (usize, usize, usize, usize) {
    let at = |frac: f64, len: usize| (frac * len as f64).floor() as usize;
    (
        at(0.40810811, height),
        at(0.99189189, height),
        at(0.03594771, width),
        at(0.96405229, width),
    )
}

/// Pixel-weighted running sums, so metrics over a dataset equal metrics over
/// the concatenation of its valid pixels.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    count: u64,
    within: [u64; 3],
    abs_rel: f64,
    sq_rel: f64,
    sq_err: f64,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pixels(&self) -> u64 {
        self.count
    }

    /// Adds one batch. `pred` and `gt` are `N×1×h×w` and `N×1×H×W`;
    /// `mask` has one entry per `gt` pixel.
    pub fn add<T: Element>(&mut self, pred: &Tensor<T>, gt: &Tensor<T>, mask: &[bool], protocol: &EvalProtocol) -> Result<()> {
        protocol.validate()?;
        let (n, c, h, w) = gt.dims4()?;
        let (pn, pc, ph, pw) = pred.dims4()?;
        if (pn, pc) != (n, c) {
            return Err(config_err(format!(
                "prediction {:?} does not match ground truth {:?}",
                pred.shape(),
                gt.shape()
            )));
        }
        let pred = if (ph, pw) == (h, w) {
            pred.clone()
        } else if protocol.upsample_pred_to_gt {
            no_grad(|| bilinear_upsample(pred, (h, w), false))?
        } else {
            return Err(config_err(format!(
                "prediction {ph}×{pw} differs from ground truth {h}×{w} and upsampling is off"
            )));
        };
        if mask.len() != gt.numel() {
            return Err(config_err(format!(
                "mask has {} entries for {} pixels",
                mask.len(),
                gt.numel()
            )));
        }
        let (r0, r1, c0, c1) = match protocol.crop {
            Crop::None => (0, h, 0, w),
            Crop::Eigen => eigen_crop(h, w),
        };
        for (i, ((&p, &g), &m)) in pred.data().iter().zip(gt.data()).zip(mask).enumerate() {
            let (r, col) = ((i / w) % h, i % w);
            let g = g.as_f64();
            if !m || !(g > 0.0 && g <= protocol.max_depth) || !(r0..r1).contains(&r) || !(c0..c1).contains(&col) {
                continue;
            }
            let p = p.as_f64().clamp(protocol.min_depth, protocol.max_depth);
            let ratio = (p / g).max(g / p);
            for (k, thr) in [1.25, 1.25f64.powi(2), 1.25f64.powi(3)].iter().enumerate() {
                if ratio < *thr {
                    self.within[k] += 1;
                }
            }
            let e = p - g;
            self.abs_rel += e.abs() / g;
            self.sq_rel += e * e / g;
            self.sq_err += e * e;
            self.count += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::Evaluation("no valid pixels to evaluate".into()));
        }
        let n = self.count as f64;
        Ok(Metrics {
            delta1: self.within[0] as f64 / n,
            delta2: self.within[1] as f64 / n,
            delta3: self.within[2] as f64 / n,
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq_err / n).sqrt(),
        })
    }
}

/// δ1–δ3, AbsRel, SqRel and RMSE over valid pixels: `mask` set, ground truth
/// in `(0, max_depth]` and inside the crop. Predictions are upsampled to the
/// ground-truth size (when enabled) and then clamped to the depth range.
pub fn compute_metrics<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &[bool], protocol: &EvalProtocol) -> Result<Metrics> {
    let mut acc = MetricsAccumulator::new();
    acc.add(pred, gt, mask, protocol)?;
    acc.finish()
}
