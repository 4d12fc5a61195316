//! Spatial down/up-sampling: window-mean pooling and bilinear interpolation.

use super::{lit, Element, Tensor};
use crate::error::{config_err, Result};

/// Adaptive window `[⌊i·in/out⌋, ⌈(i+1)·in/out⌉)` for output index `i`.
fn window(i: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let start = i * in_len / out_len;
    let end = ((i + 1) * in_len).div_ceil(out_len);
    (start, end)
}

fn pool_windows<T: Element>(x: &Tensor<T>, ht: usize, wt: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if ht == 0 || wt == 0 || ht > h || wt > w {
        return Err(config_err(format!(
            "pool target {ht}×{wt} invalid for input {h}×{w}"
        )));
    }
    let rows: Vec<(usize, usize)> = (0..ht).map(|i| window(i, h, ht)).collect();
    let cols: Vec<(usize, usize)> = (0..wt).map(|j| window(j, w, wt)).collect();
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ht * wt);
    for plane in xd.chunks(h * w) {
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let mut s = T::zero();
                for r in r0..r1 {
                    s += plane[r * w + c0..r * w + c1].iter().copied().sum::<T>();
                }
                out.push(s / lit::<T>(((r1 - r0) * (c1 - c0)) as f64));
            }
        }
    }
    let numel = x.numel();
    Ok(Tensor::from_op(vec![n, c, ht, wt], out, "avg_pool", &[x], move |_, g| {
        let mut gx = vec![T::zero(); numel];
        for (p, plane) in gx.chunks_mut(h * w).enumerate() {
            let gp = &g[p * ht * wt..(p + 1) * ht * wt];
            for (i, &(r0, r1)) in rows.iter().enumerate() {
                for (j, &(c0, c1)) in cols.iter().enumerate() {
                    let share = gp[i * wt + j] / lit::<T>(((r1 - r0) * (c1 - c0)) as f64);
                    for r in r0..r1 {
                        plane[r * w + c0..r * w + c1].iter_mut().for_each(|v| *v += share);
                    }
                }
            }
        }
        vec![Some(gx)]
    }))
}

/// Non-overlapping window means down to `(ht, wt)`; the input size must be an
/// exact multiple of the target.
pub fn avg_pool_to<T: Element>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    let (ht, wt) = target;
    if ht == 0 || wt == 0 || h % ht != 0 || w % wt != 0 {
        return Err(config_err(format!(
            "avg_pool_to: {h}×{w} is not divisible into {ht}×{wt}"
        )));
    }
    pool_windows(x, ht, wt)
}

/// Window means with adaptive boundaries, so any target no larger than the
/// input works. Identical to [`avg_pool_to`] when the sizes divide.
pub fn adaptive_avg_pool_to<T: Element>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    pool_windows(x, target.0, target.1)
}

/// Source taps `(i0, i1, λ)` per output index along one axis.
fn taps(out_len: usize, in_len: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = if align_corners {
                if out_len > 1 {
                    o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
                } else {
                    0.0
                }
            } else {
                ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0)
            };
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear interpolation up to `(ht, wt)`; downscaling is rejected.
pub fn bilinear_upsample<T: Element>(
    x: &Tensor<T>,
    target: (usize, usize),
    align_corners: bool,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (ht, wt) = target;
    if ht < h || wt < w {
        return Err(config_err(format!(
            "bilinear_upsample cannot shrink {h}×{w} to {ht}×{wt}; use average pooling"
        )));
    }
    if (ht, wt) == (h, w) {
        return Ok(Tensor::from_op(x.shape().to_vec(), x.to_vec(), "upsample", &[x], |_, g| {
            vec![Some(g.to_vec())]
        }));
    }
    let ty: Vec<(usize, usize, T)> = taps(ht, h, align_corners)
        .into_iter()
        .map(|(a, b, l)| (a, b, lit(l)))
        .collect();
    let tx: Vec<(usize, usize, T)> = taps(wt, w, align_corners)
        .into_iter()
        .map(|(a, b, l)| (a, b, lit(l)))
        .collect();
    // Separable: interpolate along x for every source row, then blend rows.
    let mut out = vec![T::zero(); n * c * ht * wt];
    let mut rows = vec![T::zero(); h * wt];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ht * wt)) {
        for (src, row) in plane.chunks(w).zip(rows.chunks_mut(wt)) {
            for (r, &(x0, x1, lx)) in row.iter_mut().zip(&tx) {
                *r = src[x0] * (T::one() - lx) + src[x1] * lx;
            }
        }
        for (o, &(y0, y1, ly)) in dst.chunks_mut(wt).zip(&ty) {
            let (top, bot) = (&rows[y0 * wt..(y0 + 1) * wt], &rows[y1 * wt..(y1 + 1) * wt]);
            for ((o, &t), &b) in o.iter_mut().zip(top).zip(bot) {
                *o = t * (T::one() - ly) + b * ly;
            }
        }
    }
    let numel = x.numel();
    Ok(Tensor::from_op(vec![n, c, ht, wt], out, "upsample", &[x], move |_, g| {
        let mut gx = vec![T::zero(); numel];
        let mut grows = vec![T::zero(); h * wt];
        for (plane, gp) in gx.chunks_mut(h * w).zip(g.chunks(ht * wt)) {
            grows.fill(T::zero());
            for (gr, &(y0, y1, ly)) in gp.chunks(wt).zip(&ty) {
                for (k, &gv) in gr.iter().enumerate() {
                    grows[y0 * wt + k] += gv * (T::one() - ly);
                }
                for (k, &gv) in gr.iter().enumerate() {
                    grows[y1 * wt + k] += gv * ly;
                }
            }
            for (dst, gr) in plane.chunks_mut(w).zip(grows.chunks(wt)) {
                for (&gv, &(x0, x1, lx)) in gr.iter().zip(&tx) {
                    dst[x0] += gv * (T::one() - lx);
                    dst[x1] += gv * lx;
                }
            }
        }
        vec![Some(gx)]
    }))
}
