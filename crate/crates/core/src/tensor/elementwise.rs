//! Broadcasting binary ops, unary maps and full reductions.

use super::{lit, Element, Tensor};
use crate::error::{config_err, usage_err, Error, Result};

/// Numpy-style right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(config_err(format!(
                    "cannot broadcast shapes {a:?} and {b:?}"
                )))
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// `in_shape` broadcast against it.
pub(crate) fn broadcast_index_map(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= in_shape[i];
    }
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..numel {
        map.push(flat);
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
    map
}

type Partial<T> = fn(T, T, T) -> T;

fn binary<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    name: &'static str,
    f: fn(T, T) -> T,
    da: Partial<T>,
    db: Partial<T>,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let (ac, bc) = (a.clone(), b.clone());
        return Ok(Tensor::from_op(a.shape().to_vec(), data, name, &[a, b], move |_, g| {
            let ga = ac.requires_grad().then(|| {
                g.iter()
                    .zip(ac.data().iter().zip(bc.data()))
                    .map(|(&g, (&x, &y))| da(g, x, y))
                    .collect()
            });
            let gb = bc.requires_grad().then(|| {
                g.iter()
                    .zip(ac.data().iter().zip(bc.data()))
                    .map(|(&g, (&x, &y))| db(g, x, y))
                    .collect()
            });
            vec![ga, gb]
        }));
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let ma = broadcast_index_map(&shape, a.shape());
    let mb = broadcast_index_map(&shape, b.shape());
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = ma.iter().zip(&mb).map(|(&i, &j)| f(ad[i], bd[j])).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(shape, data, name, &[a, b], move |_, g| {
        let (ad, bd) = (ac.data(), bc.data());
        let ga = ac.requires_grad().then(|| {
            let mut out = vec![T::zero(); ad.len()];
            for (k, (&i, &j)) in ma.iter().zip(&mb).enumerate() {
                out[i] += da(g[k], ad[i], bd[j]);
            }
            out
        });
        let gb = bc.requires_grad().then(|| {
            let mut out = vec![T::zero(); bd.len()];
            for (k, (&i, &j)) in ma.iter().zip(&mb).enumerate() {
                out[j] += db(g[k], ad[i], bd[j]);
            }
            out
        });
        vec![ga, gb]
    }))
}

fn unary<T: Element>(
    x: &Tensor<T>,
    name: &'static str,
    f: impl Fn(T) -> T,
    // derivative from (input, output)
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(x.shape().to_vec(), data, name, &[x], move |out, g| {
        let gx = g
            .iter()
            .zip(xc.data().iter().zip(out))
            .map(|(&g, (&xi, &yi))| g * df(xi, yi))
            .collect();
        vec![Some(gx)]
    })
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, "add", |x, y| x + y, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, "sub", |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, "mul", |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(
            self,
            other,
            "div",
            |x, y| x / y,
            |g, _, y| g / y,
            |g, x, y| -g * x / (y * y),
        )
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        unary(self, "add_scalar", move |v| v + s, |_, _| T::one())
    }

    pub fn mul_scalar(&self, s: T) -> Tensor<T> {
        unary(self, "mul_scalar", move |v| v * s, move |_, _| s)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-T::one())
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, "square", |v| v * v, |x, _| x + x)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |v| v.exp(), |_, y| y)
    }

    /// Natural log; every element must be strictly positive.
    pub fn log(&self) -> Result<Tensor<T>> {
        if let Some(pos) = self.data().iter().position(|v| !(*v > T::zero())) {
            return Err(Error::Domain(format!(
                "log of non-positive value {} at index {pos}",
                self.data()[pos]
            )));
        }
        Ok(unary(self, "log", |v| v.ln(), |x, _| T::one() / x))
    }

    /// Square root; every element must be non-negative. The gradient at 0 is
    /// taken as 0 rather than infinity.
    pub fn sqrt(&self) -> Result<Tensor<T>> {
        if let Some(pos) = self.data().iter().position(|v| !(*v >= T::zero())) {
            return Err(Error::Domain(format!(
                "sqrt of negative value {} at index {pos}",
                self.data()[pos]
            )));
        }
        Ok(unary(self, "sqrt", |v| v.sqrt(), |_, y| {
            if y > T::zero() {
                lit::<T>(0.5) / y
            } else {
                T::zero()
            }
        }))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            self,
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// `min(max(x, 0), 6)`; the subgradient is 0 at both kinks.
    pub fn relu6(&self) -> Tensor<T> {
        let six = lit::<T>(6.0);
        unary(
            self,
            "relu6",
            move |v| v.max(T::zero()).min(six),
            move |x, _| {
                if x > T::zero() && x < six {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn clamp_min(&self, lo: T) -> Tensor<T> {
        unary(
            self,
            "clamp_min",
            move |v| v.max(lo),
            move |x, _| if x > lo { T::one() } else { T::zero() },
        )
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![total], "sum", &[self], move |_, g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    /// Mean of all elements as a `[1]` tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / lit::<T>(n as f64);
        let total: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![1], vec![total * inv], "mean", &[self], move |_, g| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }

    /// Selects elements by flat index into a rank-1 tensor.
    pub fn gather_flat(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if indices.is_empty() {
            return Err(usage_err("gather_flat with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.numel()) {
            return Err(usage_err(format!(
                "gather index {bad} out of range for {} elements",
                self.numel()
            )));
        }
        let data = indices.iter().map(|&i| self.data()[i]).collect();
        let idx = indices.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op(vec![indices.len()], data, "gather", &[self], move |_, g| {
            let mut out = vec![T::zero(); n];
            for (&i, &gi) in idx.iter().zip(g) {
                out[i] += gi;
            }
            vec![Some(out)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_channel_gate() {
        let a = Tensor::<f64>::new((0..12).map(f64::from).collect(), &[1, 3, 2, 2]).unwrap();
        let b = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let c = a.mul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2, 2]);
        assert_eq!(c.data()[4..8], [4.0, 10.0, 18.0, 28.0]);
    }

    #[test]
    fn incompatible_broadcast_is_config_error() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[4]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Config(_))));
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::<f32>::zeros(&[1]).unwrap();
        assert_eq!(x.sigmoid().data(), &[0.5]);
    }

    #[test]
    fn relu6_clamps() {
        let x = Tensor::<f32>::new(vec![-1.0, 3.0, 9.0], &[3]).unwrap();
        assert_eq!(x.relu6().data(), &[0.0, 3.0, 6.0]);
        let z = Tensor::<f32>::zeros(&[2, 2]).unwrap();
        assert!(z.relu6().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu6_subgradients() {
        let x = Tensor::<f64>::param(vec![-1.0, 3.0, 9.0], &[3]).unwrap();
        x.relu6().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let x = Tensor::<f32>::new(vec![1.0, 0.0], &[2]).unwrap();
        assert!(matches!(x.log(), Err(Error::Domain(_))));
    }

    #[test]
    fn sum_and_square_gradients() {
        let x = Tensor::<f64>::param(vec![1.0, -2.0, 0.5], &[3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.take_grad().unwrap(), vec![1.0; 3]);
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.take_grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }
}
