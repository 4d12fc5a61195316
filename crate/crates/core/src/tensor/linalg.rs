use super::{counter, Element, Tensor};
use crate::error::{config_err, Result};

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major and contiguous.
fn matmul_kernel<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    if counter::active() {
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                    counter::tick();
                }
                c[i * n + j] = acc;
            }
        }
        return;
    }
    T::gemm(
        m,
        k,
        n,
        a,
        (k as isize, 1),
        b,
        (n as isize, 1),
        T::zero(),
        c,
        (n as isize, 1),
    );
}

impl<T: Element> Tensor<T> {
    /// Matrix product of `[M,K]·[K,N]` or batched `[B,M,K]·[B,K,N]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, m, k, n) = match (self.shape(), rhs.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n),
            (&[b, m, k], &[b2, k2, n]) if b == b2 && k == k2 => (b, m, k, n),
            (a, b) => {
                return Err(config_err(format!(
                    "matmul shape mismatch: {a:?} · {b:?}"
                )))
            }
        };
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            matmul_kernel(
                m,
                k,
                n,
                &self.data()[bi * m * k..(bi + 1) * m * k],
                &rhs.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let shape = if self.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(shape, out, "matmul", &[self, rhs], move |_, g| {
            let ga = a.requires_grad().then(|| {
                // dA = dC · Bᵀ
                let mut ga = vec![T::zero(); batch * m * k];
                for bi in 0..batch {
                    T::gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..],
                        (n as isize, 1),
                        &b.data()[bi * k * n..],
                        (1, n as isize),
                        T::zero(),
                        &mut ga[bi * m * k..],
                        (k as isize, 1),
                    );
                }
                ga
            });
            let gb = b.requires_grad().then(|| {
                // dB = Aᵀ · dC
                let mut gb = vec![T::zero(); batch * k * n];
                for bi in 0..batch {
                    T::gemm(
                        k,
                        m,
                        n,
                        &a.data()[bi * m * k..],
                        (1, k as isize),
                        &g[bi * m * n..],
                        (n as isize, 1),
                        T::zero(),
                        &mut gb[bi * k * n..],
                        (n as isize, 1),
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }
}
