//! 2-D cross-correlation. Dense convolutions go through im2col + GEMM,
//! grouped (depthwise) ones through direct loops.

use super::{counter, Element, Tensor};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

/// Output length `⌊(input + 2·padding − kernel) / stride⌋ + 1`.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(config_err("conv stride must be positive"));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(config_err(format!(
            "kernel {kernel} larger than padded input {padded} (input {input}, padding {padding})"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output positions `o` along one axis whose input tap `o·s + k − p` is in bounds.
    fn valid(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if in_len + p > k {
            ((in_len - 1 + p - k) / s + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Output rows per im2col chunk, keeping the column buffer near 4M elements.
    fn rows_per_chunk(&self) -> usize {
        let k = self.cin * self.kh * self.kw;
        ((1usize << 22) / (k * self.ow).max(1)).clamp(1, self.oh)
    }
}

fn im2col<T: Element>(g: &Geometry, x: &[T], rows: std::ops::Range<usize>, cols: &mut [T]) {
    let width = rows.len() * g.ow;
    let mut r = 0;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[r * width..(r + 1) * width];
                let (jlo, jhi) = g.valid(kj, g.w, g.ow);
                for (ri, oh) in rows.clone().enumerate() {
                    let out = &mut dst[ri * g.ow..(ri + 1) * g.ow];
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih as usize >= g.h || jlo >= jhi {
                        out.fill(T::zero());
                        continue;
                    }
                    out[..jlo].fill(T::zero());
                    out[jhi..].fill(T::zero());
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    if g.stride == 1 {
                        let start = jlo + kj - g.pad;
                        out[jlo..jhi].copy_from_slice(&src[start..start + (jhi - jlo)]);
                    } else {
                        for ow in jlo..jhi {
                            out[ow] = src[ow * g.stride + kj - g.pad];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn col2im<T: Element>(g: &Geometry, cols: &[T], rows: std::ops::Range<usize>, dx: &mut [T]) {
    let width = rows.len() * g.ow;
    let mut r = 0;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[r * width..(r + 1) * width];
                let (jlo, jhi) = g.valid(kj, g.w, g.ow);
                for (ri, oh) in rows.clone().enumerate() {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih as usize >= g.h || jlo >= jhi {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let s = &src[ri * g.ow + jlo..ri * g.ow + jhi];
                    if g.stride == 1 {
                        let d = &mut dst[jlo + kj - g.pad..jhi + kj - g.pad];
                        for (d, &v) in d.iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (i, &v) in s.iter().enumerate() {
                            dst[(jlo + i) * g.stride + kj - g.pad] += v;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn dense_forward<T: Element>(g: &Geometry, x: &[T], w: &[T], out: &mut [T]) {
    let k = g.cin * g.kh * g.kw;
    let (in_sz, out_sz) = (g.cin * g.h * g.w, g.cout * g.oh * g.ow);
    let plane = g.oh * g.ow;
    let chunk = g.rows_per_chunk();
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * chunk * g.ow] };
    for n in 0..g.n {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let yn = &mut out[n * out_sz..(n + 1) * out_sz];
        if g.is_pointwise() {
            T::gemm(g.cout, g.cin, plane, w, (k as isize, 1), xn, (plane as isize, 1), T::zero(), yn, (plane as isize, 1));
            continue;
        }
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + chunk).min(g.oh);
            let width = (r1 - r0) * g.ow;
            im2col(g, xn, r0..r1, &mut cols);
            T::gemm(
                g.cout,
                k,
                width,
                w,
                (k as isize, 1),
                &cols,
                (width as isize, 1),
                T::zero(),
                &mut yn[r0 * g.ow..],
                (plane as isize, 1),
            );
            r0 = r1;
        }
    }
}

fn dense_backward<T: Element>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    gy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let k = g.cin * g.kh * g.kw;
    let (in_sz, out_sz) = (g.cin * g.h * g.w, g.cout * g.oh * g.ow);
    let plane = g.oh * g.ow;
    let chunk = g.rows_per_chunk();
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * chunk * g.ow] };
    for n in 0..g.n {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let gyn = &gy[n * out_sz..(n + 1) * out_sz];
        if g.is_pointwise() {
            if let Some(dw) = dw.as_deref_mut() {
                T::gemm(g.cout, plane, g.cin, gyn, (plane as isize, 1), xn, (1, plane as isize), T::one(), dw, (k as isize, 1));
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxn = &mut dx[n * in_sz..(n + 1) * in_sz];
                T::gemm(g.cin, g.cout, plane, w, (1, k as isize), gyn, (plane as isize, 1), T::zero(), dxn, (plane as isize, 1));
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + chunk).min(g.oh);
            let width = (r1 - r0) * g.ow;
            let gy_chunk = &gyn[r0 * g.ow..];
            if let Some(dw) = dw.as_deref_mut() {
                im2col(g, xn, r0..r1, &mut cols);
                T::gemm(g.cout, width, k, gy_chunk, (plane as isize, 1), &cols, (1, width as isize), T::one(), dw, (k as isize, 1));
            }
            if let Some(dx) = dx.as_deref_mut() {
                T::gemm(k, g.cout, width, w, (1, k as isize), gy_chunk, (plane as isize, 1), T::zero(), &mut cols, (width as isize, 1));
                col2im(g, &cols, r0..r1, &mut dx[n * in_sz..(n + 1) * in_sz]);
            }
            r0 = r1;
        }
    }
}

fn grouped_forward<T: Element>(g: &Geometry, x: &[T], w: &[T], out: &mut [T]) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let out_plane = &mut out[((n * g.cout) + co) * g.oh * g.ow..][..g.oh * g.ow];
            for ci in 0..cin_g {
                let in_plane = &x[((n * g.cin) + grp * cin_g + ci) * g.h * g.w..][..g.h * g.w];
                for ki in 0..g.kh {
                    let (ilo, ihi) = g.valid(ki, g.h, g.oh);
                    for kj in 0..g.kw {
                        let (jlo, jhi) = g.valid(kj, g.w, g.ow);
                        if jlo >= jhi {
                            continue;
                        }
                        let wv = w[((co * cin_g + ci) * g.kh + ki) * g.kw + kj];
                        for oh in ilo..ihi {
                            let ih = oh * g.stride + ki - g.pad;
                            let src = &in_plane[ih * g.w..(ih + 1) * g.w];
                            let dst = &mut out_plane[oh * g.ow..(oh + 1) * g.ow];
                            if g.stride == 1 {
                                let src = &src[jlo + kj - g.pad..jhi + kj - g.pad];
                                for (d, &v) in dst[jlo..jhi].iter_mut().zip(src) {
                                    *d += wv * v;
                                }
                            } else {
                                for ow in jlo..jhi {
                                    dst[ow] += wv * src[ow * g.stride + kj - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn grouped_backward<T: Element>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    gy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let gy_plane = &gy[((n * g.cout) + co) * g.oh * g.ow..][..g.oh * g.ow];
            for ci in 0..cin_g {
                let in_off = ((n * g.cin) + grp * cin_g + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    let (ilo, ihi) = g.valid(ki, g.h, g.oh);
                    for kj in 0..g.kw {
                        let (jlo, jhi) = g.valid(kj, g.w, g.ow);
                        if jlo >= jhi {
                            continue;
                        }
                        let widx = ((co * cin_g + ci) * g.kh + ki) * g.kw + kj;
                        let wv = w[widx];
                        let mut acc = T::zero();
                        for oh in ilo..ihi {
                            let ih = oh * g.stride + ki - g.pad;
                            let row = in_off + ih * g.w;
                            let gyr = &gy_plane[oh * g.ow + jlo..oh * g.ow + jhi];
                            if g.stride == 1 {
                                let span = row + jlo + kj - g.pad..row + jhi + kj - g.pad;
                                if dw.is_some() {
                                    acc += dot(gyr, &x[span.clone()]);
                                }
                                if let Some(dx) = dx.as_deref_mut() {
                                    for (d, &gv) in dx[span].iter_mut().zip(gyr) {
                                        *d += wv * gv;
                                    }
                                }
                                continue;
                            }
                            if dw.is_some() {
                                for (i, &gv) in gyr.iter().enumerate() {
                                    acc += gv * x[row + (jlo + i) * g.stride + kj - g.pad];
                                }
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                for (i, &gv) in gyr.iter().enumerate() {
                                    dx[row + (jlo + i) * g.stride + kj - g.pad] += wv * gv;
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).fold(T::zero(), |s, v| s + v);
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    lanes.iter().fold(tail, |s, &v| s + v)
}

/// Plain loops over every kernel tap, padding included, ticking the MAC
/// counter once per multiply-accumulate.
fn counted_forward<T: Element>(g: &Geometry, x: &[T], w: &[T], out: &mut [T]) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / cout_g;
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let mut acc = T::zero();
                    for ci in 0..cin_g {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                                let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                                let inside = ih >= 0 && iw >= 0 && (ih as usize) < g.h && (iw as usize) < g.w;
                                let xv = if inside {
                                    x[((n * g.cin + grp * cin_g + ci) * g.h + ih as usize) * g.w + iw as usize]
                                } else {
                                    T::zero()
                                };
                                acc += w[((co * cin_g + ci) * g.kh + ki) * g.kw + kj] * xv;
                                counter::tick();
                            }
                        }
                    }
                    out[((n * g.cout + co) * g.oh + oh) * g.ow + ow] = acc;
                }
            }
        }
    }
}

/// 2-D cross-correlation of `input [N,Cin,H,W]` with `weight [Cout,Cin/groups,Kh,Kw]`.
///
/// Output spatial size follows the floor convention of
/// [`conv_output_size`].
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, cin_g, kh, kw) = match *weight.shape() {
        [a, b, c, d] => (a, b, c, d),
        ref s => return Err(config_err(format!("conv weight must be rank 4, got {s:?}"))),
    };
    let groups = opts.groups;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(config_err(format!(
            "channels in={cin} out={cout} not divisible by groups={groups}"
        )));
    }
    if cin_g * groups != cin {
        return Err(config_err(format!(
            "conv weight expects {} input channels, input has {cin} (weight {:?}, groups {groups})",
            cin_g * groups,
            weight.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(config_err(format!(
                "conv bias shape {:?} does not match {cout} output channels",
                b.shape()
            )));
        }
    }
    let oh = conv_output_size(h, kh, opts.stride, opts.padding)?;
    let ow = conv_output_size(w, kw, opts.stride, opts.padding)?;
    let g = Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
        stride: opts.stride,
        pad: opts.padding,
        groups,
    };
    let mut out = vec![T::zero(); n * cout * oh * ow];
    if counter::active() {
        counted_forward(&g, input.data(), weight.data(), &mut out);
    } else if groups == 1 {
        dense_forward(&g, input.data(), weight.data(), &mut out);
    } else {
        grouped_forward(&g, input.data(), weight.data(), &mut out);
    }
    let plane = oh * ow;
    if let Some(b) = bias {
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = b.data()[i % cout];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }

    let (x, wt) = (input.clone(), weight.clone());
    let has_bias = bias.is_some_and(|b| b.requires_grad());
    let mut inputs = vec![input, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    let n_inputs = inputs.len();
    Ok(Tensor::from_op(vec![n, cout, oh, ow], out, "conv2d", &inputs, move |_, gy| {
        let mut dx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
        let mut dw = wt.requires_grad().then(|| vec![T::zero(); wt.numel()]);
        if groups == 1 {
            dense_backward(&g, x.data(), wt.data(), gy, dx.as_deref_mut(), dw.as_deref_mut());
        } else {
            grouped_backward(&g, x.data(), wt.data(), gy, dx.as_deref_mut(), dw.as_deref_mut());
        }
        let mut grads = vec![dx, dw];
        if n_inputs == 3 {
            let db = has_bias.then(|| {
                let mut db = vec![T::zero(); cout];
                for (i, chunk) in gy.chunks(plane).enumerate() {
                    db[i % cout] += chunk.iter().copied().sum::<T>();
                }
                db
            });
            grads.push(db);
        }
        grads
    }))
}
