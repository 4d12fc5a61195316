use rand::Rng;

use super::{scoped, Activation, ConvBn, Entry, Module, NormConfig};
use crate::error::{config_err, usage_err, Result};
use crate::profiler::ProfileRow;
use crate::tensor::{lit, Element, NormMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    /// Channels of the query source and of the output.
    pub channels: usize,
    /// Channels of the key/value source.
    pub kv_channels: usize,
    pub heads: usize,
    pub qk_dim: usize,
    pub v_dim: usize,
}

impl AttentionSpec {
    /// One head per 32 query channels (rounded up), 16-wide queries and keys.
    pub fn new(channels: usize, kv_channels: usize, v_dim: usize) -> Self {
        Self {
            channels,
            kv_channels,
            heads: channels.div_ceil(32),
            qk_dim: 16,
            v_dim,
        }
    }

    /// MACs of `QKᵀ` and `AV` for one image, projections excluded.
    pub fn core_macs(&self, queries: usize, keys: usize) -> u64 {
        (self.heads * (self.qk_dim + self.v_dim) * queries * keys) as u64
    }
}

/// Multi-head attention with queries from one map and keys/values from
/// another of the same spatial size. Every projection is a 1×1 conv + BN.
#[derive(Clone, Debug)]
pub struct CrossAttention<T: Element> {
    pub spec: AttentionSpec,
    pub q: ConvBn<T>,
    pub k: ConvBn<T>,
    pub v: ConvBn<T>,
    pub proj: ConvBn<T>,
}

impl<T: Element> CrossAttention<T> {
    pub fn new<R: Rng + ?Sized>(spec: AttentionSpec, norm: NormConfig, rng: &mut R) -> Result<Self> {
        if spec.heads == 0 || spec.qk_dim == 0 || spec.v_dim == 0 {
            return Err(config_err(format!("degenerate attention spec {spec:?}")));
        }
        let (qk, vd) = (spec.heads * spec.qk_dim, spec.heads * spec.v_dim);
        let pw = |cin, cout, rng: &mut R| ConvBn::new(cin, cout, 1, 1, 1, Activation::Identity, norm, rng);
        Ok(Self {
            spec,
            q: pw(spec.channels, qk, rng)?,
            k: pw(spec.kv_channels, qk, rng)?,
            v: pw(spec.kv_channels, vd, rng)?,
            proj: pw(vd, spec.channels, rng)?,
        })
    }

    pub fn forward(&self, local: &Tensor<T>, kv: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        Ok(self.forward_with_weights(local, kv, mode)?.0)
    }

    /// Also returns the attention weights, shaped `[N·heads, L, L]`.
    pub fn forward_with_weights(
        &self,
        local: &Tensor<T>,
        kv: &Tensor<T>,
        mode: NormMode,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (n, c, h, w) = local.dims4()?;
        let (nk, ck, hk, wk) = kv.dims4()?;
        if (n, h, w) != (nk, hk, wk) {
            return Err(usage_err(format!(
                "attention needs query and key maps at the same resolution, got {:?} and {:?}",
                local.shape(),
                kv.shape()
            )));
        }
        if c != self.spec.channels || ck != self.spec.kv_channels {
            return Err(config_err(format!(
                "attention built for {}/{} channels, got {c}/{ck}",
                self.spec.channels, self.spec.kv_channels
            )));
        }
        let AttentionSpec { heads, qk_dim, v_dim, .. } = self.spec;
        let l = h * w;
        let nh = n * heads;
        let q = self.q.forward(local, mode)?.reshape(&[nh, qk_dim, l])?.permute(&[0, 2, 1])?;
        let k = self.k.forward(kv, mode)?.reshape(&[nh, qk_dim, l])?;
        let v = self.v.forward(kv, mode)?.reshape(&[nh, v_dim, l])?.permute(&[0, 2, 1])?;
        let scale = lit::<T>(1.0 / (qk_dim as f64).sqrt());
        let weights = q.matmul(&k)?.mul_scalar(scale).softmax(2)?;
        let out = weights
            .matmul(&v)?
            .permute(&[0, 2, 1])?
            .reshape(&[n, heads * v_dim, h, w])?;
        Ok((self.proj.forward(&out, mode)?, weights))
    }

    /// `local` and `kv` are the query- and key-source shapes.
    pub fn profile(&self, scope: &str, local: [usize; 4], kv: [usize; 4], rows: &mut Vec<ProfileRow>) -> Result<()> {
        let q = self.q.profile(&scoped(scope, "q"), local, rows)?;
        self.k.profile(&scoped(scope, "k"), kv, rows)?;
        let v = self.v.profile(&scoped(scope, "v"), kv, rows)?;
        let l = q[2] * q[3];
        rows.push(ProfileRow::new(
            &scoped(scope, "core"),
            "attention",
            0,
            local[0] as u64 * self.spec.core_macs(l, l),
        ));
        self.proj.profile(&scoped(scope, "proj"), v, rows)?;
        Ok(())
    }
}

impl<T: Element> Module<T> for CrossAttention<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, Entry<'a, T>)) {
        self.q.visit(&scoped(scope, "q"), f);
        self.k.visit(&scoped(scope, "k"), f);
        self.v.visit(&scoped(scope, "v"), f);
        self.proj.visit(&scoped(scope, "proj"), f);
    }
}
