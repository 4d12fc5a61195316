use super::{Element, Tensor};
use crate::error::{config_err, usage_err, Result};

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `data` (laid out as `shape`) into the order given by `perm`.
fn permute_data<T: Element>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let src_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..data.len() {
        out.push(data[flat]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            flat -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat<T: Element>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = tensors
        .first()
        .ok_or_else(|| usage_err("concat of an empty list"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(usage_err(format!("concat axis {axis} out of range for rank {rank}")));
    }
    for t in tensors {
        let ok = t.rank() == rank
            && (0..rank).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
        if !ok {
            return Err(config_err(format!(
                "concat shape mismatch: {:?} vs {:?} along axis {axis}",
                first.shape(),
                t.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
    let total_width: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total_width);
    for o in 0..outer {
        for (t, &w) in tensors.iter().zip(&widths) {
            data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
    let flags: Vec<bool> = tensors.iter().map(|t| t.requires_grad()).collect();
    Ok(Tensor::from_op(shape, data, "concat", tensors, move |_, g| {
        let mut grads: Vec<Option<Vec<T>>> = flags
            .iter()
            .zip(&widths)
            .map(|(&f, &w)| f.then(|| Vec::with_capacity(outer * w)))
            .collect();
        for o in 0..outer {
            let mut start = o * total_width;
            for (gi, &w) in grads.iter_mut().zip(&widths) {
                if let Some(buf) = gi {
                    buf.extend_from_slice(&g[start..start + w]);
                }
                start += w;
            }
        }
        grads
    }))
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.contains(&0) {
            return Err(config_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            &[self],
            |_, g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(usage_err(format!(
                "invalid permutation {perm:?} for rank {rank}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let data = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(out_shape, data, "permute", &[self], move |_, g| {
            vec![Some(permute_data(g, &out_shape_c, &inverse))]
        }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(usage_err(format!(
                "narrow({axis}, {start}, {len}) out of range for shape {:?}",
                self.shape()
            )));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let full = self.shape()[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let numel = self.numel();
        Ok(Tensor::from_op(shape, data, "narrow", &[self], move |_, g| {
            let mut out = vec![T::zero(); numel];
            for o in 0..outer {
                let base = o * full + start * inner;
                out[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(out)]
        }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(usage_err(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let len = self.shape()[axis];
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let outer: usize = self.shape()[..axis].iter().product();
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, "softmax", &[self], move |y, g| {
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
