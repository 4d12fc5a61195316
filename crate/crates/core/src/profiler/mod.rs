//! Analytic parameter/MAC accounting and the wall-clock throughput harness.
//!
//! One multiply-accumulate counts as one MAC. Bias adds, normalisation,
//! activations, softmax, pooling and interpolation are free.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{config_err, Result};
use crate::model::Model;
use crate::nn::param_count;
use crate::tensor::counter;
use crate::tensor::{no_grad, Element, NormMode, Tensor};

/// One layer's contribution to a [`ProfileReport`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileRow {
    pub name: String,
    pub kind: &'static str,
    pub params: u64,
    pub macs: u64,
}

impl ProfileRow {
    pub fn new(name: &str, kind: &'static str, params: usize, macs: u64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            params: params as u64,
            macs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileReport {
    pub input_shape: [usize; 4],
    pub rows: Vec<ProfileRow>,
}

impl ProfileReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    /// MACs of rows whose name starts with `prefix` (e.g. `"connection"`).
    pub fn macs_under(&self, prefix: &str) -> u64 {
        self.rows.iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.macs).sum()
    }

    pub fn params_under(&self, prefix: &str) -> u64 {
        self.rows.iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.params).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,kind,params,macs\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.kind, r.params, r.macs);
        }
        let _ = writeln!(s, "total,,{},{}", self.total_params(), self.total_macs());
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let [n, c, h, w] = self.input_shape;
        let _ = writeln!(s, "input {n}x{c}x{h}x{w}");
        let _ = writeln!(s, "{:<width$}  {:<9}  {:>10}  {:>14}", "layer", "kind", "params", "macs");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:<9}  {:>10}  {:>14}", r.name, r.kind, r.params, r.macs);
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:<9}  {:>10}  {:>14}",
            "total",
            "",
            self.total_params(),
            self.total_macs()
        );
        let _ = writeln!(
            s,
            "{:.3}M params, {:.3}G MACs",
            self.total_params() as f64 / 1e6,
            self.total_macs() as f64 / 1e9
        );
        s
    }
}

/// Learned scalars only; batch-norm running statistics are excluded.
pub fn count_params<T: Element>(model: &Model<T>) -> u64 {
    param_count(model) as u64
}

pub fn count_macs<T: Element>(model: &Model<T>, input_shape: [usize; 4]) -> Result<ProfileReport> {
    Ok(ProfileReport {
        input_shape,
        rows: model.profile(input_shape)?,
    })
}

/// `|analytic − counted|` where `counted` comes from an instrumented forward
/// pass that ticks once per multiply-accumulate in every conv and matmul.
/// Only meant for tiny inputs: the instrumented kernels are naive loops.
pub fn macs_oracle_check<T: Element>(model: &Model<T>, input_shape: [usize; 4]) -> Result<u64> {
    let analytic = count_macs(model, input_shape)?.total_macs();
    let x = Tensor::<T>::zeros(&input_shape)?;
    let (out, counted) = counter::count_macs(|| no_grad(|| model.forward(&x, NormMode::Eval)));
    out?;
    Ok(analytic.abs_diff(counted))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub input_shape: [usize; 4],
    pub warmup_iters: usize,
    pub timed_iters: usize,
    /// Seconds per timed iteration.
    pub latencies: Vec<f64>,
}

impl BenchReport {
    pub fn total_seconds(&self) -> f64 {
        self.latencies.iter().sum()
    }

    pub fn fps(&self) -> f64 {
        self.timed_iters as f64 / self.total_seconds()
    }

    pub fn mean_latency(&self) -> f64 {
        self.total_seconds() / self.timed_iters as f64
    }

    /// Nearest-rank percentile, `q` in `[0, 100]`.
    pub fn percentile(&self, q: f64) -> f64 {
        let mut v = self.latencies.clone();
        v.sort_by(f64::total_cmp);
        let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
        v[rank.clamp(1, v.len()) - 1]
    }

    pub fn to_csv(&self) -> String {
        let [n, c, h, w] = self.input_shape;
        format!(
            "shape,warmup,iters,fps,mean_ms,p50_ms,p95_ms\n{n}x{c}x{h}x{w},{},{},{:.4},{:.4},{:.4},{:.4}\n",
            self.warmup_iters,
            self.timed_iters,
            self.fps(),
            self.mean_latency() * 1e3,
            self.percentile(50.0) * 1e3,
            self.percentile(95.0) * 1e3
        )
    }

    pub fn to_table(&self) -> String {
        let [n, c, h, w] = self.input_shape;
        format!(
            "input      {n}x{c}x{h}x{w}\nwarmup     {}\niters      {}\nfps        {:.3}\nmean (ms)  {:.3}\np50 (ms)   {:.3}\np95 (ms)   {:.3}\n",
            self.warmup_iters,
            self.timed_iters,
            self.fps(),
            self.mean_latency() * 1e3,
            self.percentile(50.0) * 1e3,
            self.percentile(95.0) * 1e3
        )
    }
}

/// Times `iters` inference passes (BN in eval mode, no tape) after `warmup`
/// discarded ones, on the calling thread.
pub fn benchmark_fps<T: Element>(
    model: &Model<T>,
    input_shape: [usize; 4],
    warmup: usize,
    iters: usize,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(config_err("benchmark needs at least one timed iteration"));
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let x = Tensor::<T>::rand_uniform(&input_shape, 0.0, 1.0, &mut rng)?;
    no_grad(|| {
        for _ in 0..warmup {
            model.forward(&x, NormMode::Eval)?;
        }
        let mut latencies = Vec::with_capacity(iters);
        for _ in 0..iters {
            let t = Instant::now();
            let y = model.forward(&x, NormMode::Eval)?;
            latencies.push(t.elapsed().as_secs_f64());
            std::hint::black_box(y);
        }
        Ok(BenchReport {
            input_shape,
            warmup_iters: warmup,
            timed_iters: iters,
            latencies,
        })
    })
}
