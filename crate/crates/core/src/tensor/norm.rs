use super::{lit, Element, Tensor};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T: Element> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Batch normalisation over `N×H×W` per channel of an `N×C×H×W` input.
///
/// In train mode the running mean/variance are updated with
/// `running = (1 − momentum)·running + momentum·batch` using the unbiased batch
/// variance; normalisation itself uses the biased one.
pub fn batch_norm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: NormMode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] || state.mean.len() != c || state.var.len() != c {
        return Err(config_err(format!(
            "batch norm over {c} channels got gamma {:?}, beta {:?}, state {}",
            gamma.shape(),
            beta.shape(),
            state.mean.len()
        )));
    }
    let plane = h * w;
    let count = n * plane;
    if mode == NormMode::Train && count < 2 {
        return Err(Error::Numerical(format!(
            "batch norm in train mode needs at least 2 values per channel, got N·H·W = {count}"
        )));
    }
    let xd = x.data();
    let eps_t = lit::<T>(eps);
    let (mean, var) = match mode {
        NormMode::Train => {
            let inv = T::one() / lit::<T>(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += xd[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                }
                let m = s * inv;
                let mut s2 = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * plane..][..plane] {
                        s2 += (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = s2 * inv;
            }
            let mom = lit::<T>(momentum);
            let unbias = lit::<T>(count as f64 / (count - 1) as f64);
            for ch in 0..c {
                state.mean[ch] = (T::one() - mom) * state.mean[ch] + mom * mean[ch];
                state.var[ch] = (T::one() - mom) * state.var[ch] + mom * var[ch] * unbias;
            }
            (mean, var)
        }
        NormMode::Eval => (state.mean.clone(), state.var.clone()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let (g, bt, m, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for i in base..base + plane {
                let xh = (xd[i] - m) * is;
                xhat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }

    let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        "batch_norm2d",
        &[x, gamma, beta],
        move |_, gy| {
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for i in base..base + plane {
                        sum_g[ch] += gy[i];
                        sum_gx[ch] += gy[i] * xhat[i];
                    }
                }
            }
            let dx = xc.requires_grad().then(|| {
                let mut dx = vec![T::zero(); xhat.len()];
                let m = lit::<T>(count as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let scale = gc.data()[ch] * inv_std[ch];
                        for i in base..base + plane {
                            dx[i] = match mode {
                                NormMode::Eval => scale * gy[i],
                                NormMode::Train => {
                                    scale * (gy[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                }
                            };
                        }
                    }
                }
                dx
            });
            let dgamma = gc.requires_grad().then(|| sum_gx.clone());
            let dbeta = bc.requires_grad().then(|| sum_g.clone());
            vec![dx, dgamma, dbeta]
        },
    ))
}
