//! Runtime gradient and oracle checks, shared by the `selftest` command and
//! the test suites.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss_metrics::{compute_metrics, silog_loss, EvalProtocol};
use crate::model::{AttentionMode, Model, ModelConfig, Sff};
use crate::nn::{
    named_params, Activation, AttentionSpec, ConvBn, CrossAttention, Ffn, FfnSpec, InvertedResidual,
    InvertedResidualSpec, Module, NormConfig, TransformerBlock,
};
use crate::profiler::macs_oracle_check;
use crate::tensor::gradcheck::{check_gradients, rel_err};
use crate::tensor::{
    adaptive_avg_pool_to, avg_pool_to, batch_norm2d, bilinear_upsample, concat, conv2d, no_grad, BatchNormState,
    Conv2dOptions, NormMode, Tensor,
};
use crate::train::{adam_step, lr_schedule, AdamConfig, Moments};

/// Relative-error gate for single ops and blocks.
pub const OP_TOLERANCE: f64 = 1e-3;
/// Relative-error gate for sampled parameters of the full network.
pub const END_TO_END_TOLERANCE: f64 = 1e-2;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Step for the full network, where ReLU6 kinks sit closer to some
/// pre-activations than `FD_STEP`.
pub const END_TO_END_FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    /// Observed error (or mismatch count for exact checks).
    pub value: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelfTestReport {
    pub results: Vec<CheckResult>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed()).collect()
    }

    pub fn to_table(&self) -> String {
        let width = self.results.iter().map(|r| r.name.len()).max().unwrap_or(4);
        let mut s = String::new();
        for r in &self.results {
            let verdict = if r.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{verdict}  {:<9} {:<width$}  {:.3e} (tol {:.0e})",
                r.suite, r.name, r.value, r.tolerance
            );
        }
        let failed = self.failures().len();
        let _ = writeln!(s, "{} checks, {} failed", self.results.len(), failed);
        s
    }
}

pub fn run_all() -> Result<SelfTestReport> {
    let mut results = gradient_suite()?;
    results.extend(oracle_suite()?);
    Ok(SelfTestReport { results })
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng).expect("valid shape")
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, rng).expect("valid shape")
}

/// Values at least `gap` away from every kink.
fn away_from(t: Tensor<f64>, kinks: &[f64], gap: f64) -> Tensor<f64> {
    let data = t
        .data()
        .iter()
        .map(|&v| match kinks.iter().find(|&&k| (v - k).abs() < gap) {
            Some(&k) => k + gap.copysign(v - k),
            None => v,
        })
        .collect();
    Tensor::new(data, t.shape()).expect("same shape")
}

/// `Σ out ⊙ r` for fixed random `r`, so no output symmetry hides an error.
fn project(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = randn(out.shape(), &mut rng);
    out.mul(&r).map(|t| t.sum())
}

type OpFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let x = randn(&[2, 3, 4, 5], rng);
    let chan = randn(&[1, 3, 1, 1], rng);
    let pos = uniform(&[2, 3, 4, 5], 0.5, 2.0, rng);
    let mut v: Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> = vec![
        ("add (broadcast)", vec![x.clone(), chan.clone()], Box::new(|t| t[0].add(&t[1]))),
        ("sub (broadcast)", vec![x.clone(), chan.clone()], Box::new(|t| t[0].sub(&t[1]))),
        ("mul (broadcast)", vec![x.clone(), chan.clone()], Box::new(|t| t[0].mul(&t[1]))),
        ("div (broadcast)", vec![x.clone(), uniform(&[1, 3, 1, 5], 0.5, 2.0, rng)], Box::new(|t| t[0].div(&t[1]))),
        ("add_scalar", vec![x.clone()], Box::new(|t| Ok(t[0].add_scalar(0.7)))),
        ("mul_scalar", vec![x.clone()], Box::new(|t| Ok(t[0].mul_scalar(-1.3)))),
        ("neg", vec![x.clone()], Box::new(|t| Ok(t[0].neg()))),
        ("square", vec![x.clone()], Box::new(|t| Ok(t[0].square()))),
        ("exp", vec![x.clone()], Box::new(|t| Ok(t[0].exp()))),
        ("log", vec![pos.clone()], Box::new(|t| t[0].log())),
        ("sqrt", vec![pos.clone()], Box::new(|t| t[0].sqrt())),
        ("sigmoid", vec![x.mul_scalar(3.0)], Box::new(|t| Ok(t[0].sigmoid()))),
        (
            "relu6",
            vec![away_from(x.mul_scalar(4.0).add_scalar(3.0), &[0.0, 6.0], 1e-2)],
            Box::new(|t| Ok(t[0].relu6())),
        ),
        ("clamp_min", vec![away_from(x.clone(), &[0.2], 1e-2)], Box::new(|t| Ok(t[0].clamp_min(0.2)))),
        ("sum", vec![x.clone()], Box::new(|t| Ok(t[0].sum().square()))),
        ("mean", vec![x.clone()], Box::new(|t| Ok(t[0].mean().square()))),
        ("gather_flat", vec![x.clone()], Box::new(|t| t[0].gather_flat(&[0, 7, 7, 119, 42]))),
        ("matmul 2d", vec![randn(&[3, 4], rng), randn(&[4, 5], rng)], Box::new(|t| t[0].matmul(&t[1]))),
        ("matmul 3d", vec![randn(&[2, 3, 4], rng), randn(&[2, 4, 2], rng)], Box::new(|t| t[0].matmul(&t[1]))),
        ("reshape", vec![x.clone()], Box::new(|t| t[0].reshape(&[6, 20])?.square().narrow(1, 3, 9))),
        ("permute", vec![x.clone()], Box::new(|t| t[0].permute(&[2, 0, 3, 1])?.narrow(0, 1, 2)?.exp().sum().sqrt())),
        ("narrow", vec![x.clone()], Box::new(|t| t[0].narrow(2, 1, 2))),
        ("softmax", vec![randn(&[2, 5, 3], rng)], Box::new(|t| t[0].softmax(1))),
        ("concat", vec![x.clone(), randn(&[2, 2, 4, 5], rng)], Box::new(|t| concat(&[&t[0], &t[1]], 1))),
        (
            "conv2d 3x3 bias",
            vec![randn(&[2, 3, 5, 6], rng), randn(&[4, 3, 3, 3], rng), randn(&[4], rng)],
            Box::new(|t| conv2d(&t[0], &t[1], Some(&t[2]), Conv2dOptions::new(1, 1, 1))),
        ),
        (
            "conv2d stride 2 groups 2",
            vec![randn(&[1, 4, 7, 6], rng), randn(&[6, 2, 3, 3], rng)],
            Box::new(|t| conv2d(&t[0], &t[1], None, Conv2dOptions::new(2, 1, 2))),
        ),
        (
            "conv2d depthwise",
            vec![randn(&[2, 3, 4, 4], rng), randn(&[3, 1, 3, 3], rng)],
            Box::new(|t| conv2d(&t[0], &t[1], None, Conv2dOptions::new(1, 1, 3))),
        ),
        (
            "batch_norm2d train",
            vec![randn(&[2, 3, 4, 5], rng), uniform(&[3], 0.5, 1.5, rng), randn(&[3], rng)],
            Box::new(|t| {
                let mut s = BatchNormState::new(3);
                batch_norm2d(&t[0], &t[1], &t[2], &mut s, NormMode::Train, 0.1, 1e-5)
            }),
        ),
        (
            "batch_norm2d eval",
            vec![randn(&[2, 3, 4, 5], rng), uniform(&[3], 0.5, 1.5, rng), randn(&[3], rng)],
            Box::new(|t| {
                let mut s = BatchNormState { mean: vec![0.3, -0.2, 0.1], var: vec![0.5, 2.0, 1.2] };
                batch_norm2d(&t[0], &t[1], &t[2], &mut s, NormMode::Eval, 0.1, 1e-5)
            }),
        ),
        ("avg_pool_to", vec![randn(&[1, 2, 6, 6], rng)], Box::new(|t| avg_pool_to(&t[0], (3, 2)))),
        ("adaptive_avg_pool_to", vec![randn(&[1, 2, 5, 7], rng)], Box::new(|t| adaptive_avg_pool_to(&t[0], (2, 3)))),
        ("bilinear_upsample", vec![randn(&[1, 2, 3, 4], rng)], Box::new(|t| bilinear_upsample(&t[0], (7, 9), false))),
        (
            "bilinear_upsample aligned",
            vec![randn(&[1, 2, 3, 4], rng)],
            Box::new(|t| bilinear_upsample(&t[0], (5, 8), true)),
        ),
    ];
    let gt = uniform(&[2, 1, 4, 4], 0.5, 5.0, rng);
    let mask: Vec<bool> = (0..32).map(|i| i % 5 != 0).collect();
    v.push((
        "silog_loss",
        vec![uniform(&[2, 1, 4, 4], 0.5, 5.0, rng)],
        Box::new(move |t| silog_loss(&t[0], &gt, &mask, 0.85, 10.0)),
    ));
    v
}

/// Finite differences on up to `per_param` entries of every parameter of
/// `module`, against the tape gradient of `loss()`. Returns the worst
/// relative error and the number of entries checked.
pub fn check_module_params<M: Module<f64> + ?Sized>(
    module: &M,
    loss: &dyn Fn() -> Result<Tensor<f64>>,
    per_param: usize,
) -> Result<(f64, usize)> {
    let params = named_params(module);
    let picks: Vec<(usize, Vec<usize>)> = params
        .iter()
        .enumerate()
        .map(|(i, (_, p))| {
            let n = p.numel();
            let step = n.div_ceil(per_param).max(1);
            (i, (0..n).step_by(step).collect())
        })
        .collect();
    check_param_entries(module, loss, &picks, FD_STEP)
}

fn check_param_entries<M: Module<f64> + ?Sized>(
    module: &M,
    loss: &dyn Fn() -> Result<Tensor<f64>>,
    picks: &[(usize, Vec<usize>)],
    h: f64,
) -> Result<(f64, usize)> {
    let params = named_params(module);
    for (_, p) in &params {
        p.get().take_grad();
    }
    loss()?.backward()?;
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.get().take_grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let (mut worst, mut checked) = (0f64, 0);
    for (i, entries) in picks {
        let p = params[*i].1;
        let base = p.get().to_vec();
        for &j in entries {
            let at = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[j] += delta;
                p.set(v)?;
                no_grad(loss)?.item()
            };
            let numeric = (at(h)? - at(-h)?) / (2.0 * h);
            worst = worst.max(rel_err(grads[*i][j], numeric));
            checked += 1;
        }
        p.set(base)?;
    }
    Ok((worst, checked))
}

fn grad_result(name: impl Into<String>, value: f64, tolerance: f64) -> CheckResult {
    CheckResult { suite: "gradient", name: name.into(), value, tolerance }
}

/// Every differentiable op, every composite block (inputs and parameters)
/// and 20 sampled parameters of the full network, all in 64-bit.
pub fn gradient_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for (k, (name, inputs, f)) in op_cases(&mut rng).into_iter().enumerate() {
        let seed = k as u64;
        let report = check_gradients(&inputs, |t| project(&f(t)?, seed), FD_STEP, 64)?;
        out.push(grad_result(name, report.max_rel_err, OP_TOLERANCE));
    }
    out.extend(block_checks(&mut rng)?);
    out.push(end_to_end_check(20)?);
    Ok(out)
}

fn block_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let norm = NormConfig::default();
    let mut out = Vec::new();
    let mode = NormMode::Train;
    let mut record = |name: &str, module: &dyn Module<f64>, inputs: Vec<Tensor<f64>>, f: OpFn, seed: u64| -> Result<()> {
        let report = check_gradients(&inputs, |t| project(&f(t)?, seed), FD_STEP, 32)?;
        out.push(grad_result(format!("{name} (input)"), report.max_rel_err, OP_TOLERANCE));
        let loss = || project(&f(&inputs)?, seed);
        let (worst, _) = check_module_params(module, &loss, 3)?;
        out.push(grad_result(format!("{name} (params)"), worst, OP_TOLERANCE));
        Ok(())
    };

    let cb = ConvBn::<f64>::new(3, 4, 3, 1, 1, Activation::Relu6, norm, rng)?;
    let cb2 = cb.clone();
    record("conv_bn", &cb, vec![randn(&[2, 3, 4, 4], rng)], Box::new(move |t| cb2.forward(&t[0], mode)), 1)?;

    for (label, spec) in [
        ("inverted_residual", InvertedResidualSpec::new(8, 8, 4, 1)),
        ("inverted_residual stride 2", InvertedResidualSpec::new(8, 12, 1, 2)),
    ] {
        let ir = InvertedResidual::<f64>::new(spec, norm, rng)?;
        let ir2 = ir.clone();
        record(label, &ir, vec![randn(&[2, 8, 4, 4], rng)], Box::new(move |t| ir2.forward(&t[0], mode)), 2)?;
    }

    let attn = CrossAttention::<f64>::new(AttentionSpec::new(64, 32, 32), norm, rng)?;
    let attn2 = attn.clone();
    record(
        "cross_attention",
        &attn,
        vec![randn(&[2, 64, 2, 2], rng), randn(&[2, 32, 2, 2], rng)],
        Box::new(move |t| attn2.forward(&t[0], &t[1], mode)),
        3,
    )?;

    let ffn = Ffn::<f64>::new(FfnSpec::new(16, 2), norm, rng)?;
    let ffn2 = ffn.clone();
    record("ffn", &ffn, vec![randn(&[2, 16, 3, 3], rng)], Box::new(move |t| ffn2.forward(&t[0], mode)), 4)?;

    let block = TransformerBlock::<f64>::new(AttentionSpec::new(32, 48, 16), FfnSpec::new(32, 2), norm, rng)?;
    let block2 = block.clone();
    record(
        "transformer_block",
        &block,
        vec![randn(&[2, 32, 2, 3], rng), randn(&[2, 48, 2, 3], rng)],
        Box::new(move |t| block2.forward(&t[0], &t[1], mode)),
        5,
    )?;

    let mut cfg = ModelConfig::tst_s();
    cfg.decoder_channels = 8;
    cfg.sff_hidden = 8;
    let sff = Sff::<f64>::new(&cfg, rng)?;
    let sff2 = sff.clone();
    record(
        "sff",
        &sff,
        vec![randn(&[2, 8, 3, 3], rng), randn(&[2, 8, 3, 3], rng)],
        Box::new(move |t| sff2.forward(&t[0], &t[1], mode)),
        6,
    )?;
    Ok(out)
}

/// TST-S on a 2×3×32×32 batch through the SILog loss, `samples` parameter
/// entries drawn uniformly over all scalars.
pub fn end_to_end_check(samples: usize) -> Result<CheckResult> {
    let model = Model::<f64>::new(&ModelConfig::tst_s(), 17)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = uniform(&[2, 3, 32, 32], 0.0, 1.0, &mut rng);
    let gt = uniform(&[2, 1, 32, 32], 0.5, 9.5, &mut rng);
    let mask = vec![true; gt.numel()];
    let loss = || silog_loss(&model.forward(&x, NormMode::Train)?, &gt, &mask, 0.85, 10.0);
    let sizes: Vec<usize> = named_params(&model).iter().map(|(_, p)| p.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut picks: Vec<(usize, Vec<usize>)> = Vec::new();
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let mut i = 0;
        while flat >= sizes[i] {
            flat -= sizes[i];
            i += 1;
        }
        match picks.iter_mut().find(|(p, _)| *p == i) {
            Some((_, v)) => v.push(flat),
            None => picks.push((i, vec![flat])),
        }
    }
    let (worst, _) = check_param_entries(&model, &loss, &picks, END_TO_END_FD_STEP)?;
    Ok(grad_result(format!("end-to-end tst-s ({samples} sampled params)"), worst, END_TO_END_TOLERANCE))
}

fn oracle_result(name: impl Into<String>, value: f64, tolerance: f64) -> CheckResult {
    CheckResult { suite: "oracle", name: name.into(), value, tolerance }
}

/// Library results against direct loop references.
pub fn oracle_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut out = Vec::new();

    // conv2d, stride 2, padding 1, two groups
    let x = randn(&[2, 4, 7, 6], &mut rng);
    let w = randn(&[6, 2, 3, 3], &mut rng);
    let b = randn(&[6], &mut rng);
    let got = conv2d(&x, &w, Some(&b), Conv2dOptions::new(2, 1, 2))?;
    let (ho, wo) = (4, 3);
    let mut err = 0f64;
    for n in 0..2 {
        for o in 0..6 {
            let g = o / 3;
            for r in 0..ho {
                for c in 0..wo {
                    let mut acc = b.data()[o];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = ((2 * r + ky) as isize - 1, (2 * c + kx) as isize - 1);
                                if (0..7).contains(&iy) && (0..6).contains(&ix) {
                                    let xi = ((n * 4 + g * 2 + ci) * 7 + iy as usize) * 6 + ix as usize;
                                    acc += x.data()[xi] * w.data()[((o * 2 + ci) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                    }
                    err = err.max((acc - got.data()[((n * 6 + o) * ho + r) * wo + c]).abs());
                }
            }
        }
    }
    out.push(oracle_result("conv2d vs direct loop", err, 1e-12));

    let a = randn(&[5, 7], &mut rng);
    let bm = randn(&[7, 3], &mut rng);
    let got = a.matmul(&bm)?;
    let mut err = 0f64;
    for i in 0..5 {
        for j in 0..3 {
            let want: f64 = (0..7).map(|k| a.data()[i * 7 + k] * bm.data()[k * 3 + j]).sum();
            err = err.max((want - got.data()[i * 3 + j]).abs());
        }
    }
    out.push(oracle_result("matmul vs direct loop", err, 1e-12));

    let (mut metric_err, mut loss_err) = (0f64, 0f64);
    let protocol = EvalProtocol::new(10.0);
    for _ in 0..100 {
        let gt = uniform(&[1, 1, 16, 16], 0.1, 10.0, &mut rng);
        let pred = uniform(&[1, 1, 16, 16], 0.1, 10.0, &mut rng);
        let mask: Vec<bool> = (0..256).map(|_| rng.random_bool(0.8)).collect();
        let m = compute_metrics(&pred, &gt, &mask, &protocol)?;
        let (mut n, mut d, mut ar, mut sr, mut se) = (0f64, [0f64; 3], 0f64, 0f64, 0f64);
        let (mut s1, mut s2) = (0f64, 0f64);
        for i in 0..256 {
            if !mask[i] {
                continue;
            }
            let (p, g) = (pred.data()[i], gt.data()[i]);
            let ratio = if p > g { p / g } else { g / p };
            for (k, dk) in d.iter_mut().enumerate() {
                if ratio < 1.25f64.powi(k as i32 + 1) {
                    *dk += 1.0;
                }
            }
            ar += (p - g).abs() / g;
            sr += (p - g).powi(2) / g;
            se += (p - g).powi(2);
            let li = p.ln() - g.ln();
            s1 += li;
            s2 += li * li;
            n += 1.0;
        }
        let want = [d[0] / n, d[1] / n, d[2] / n, ar / n, sr / n, (se / n).sqrt()];
        let have = [m.delta1, m.delta2, m.delta3, m.abs_rel, m.sq_rel, m.rmse];
        for (w, h) in want.iter().zip(have) {
            metric_err = metric_err.max((w - h).abs());
        }
        let want_loss = 10.0 * (s2 / n - 0.85 * (s1 / n).powi(2)).sqrt();
        let have_loss = silog_loss(&pred, &gt, &mask, 0.85, 10.0)?.item()?;
        loss_err = loss_err.max((want_loss - have_loss).abs());
    }
    out.push(oracle_result("metrics vs per-pixel loop (100 instances)", metric_err, 1e-10));
    out.push(oracle_result("silog_loss vs per-pixel loop (100 instances)", loss_err, 1e-10));

    let gt32 = Tensor::<f32>::rand_uniform(&[1, 1, 16, 16], 0.5, 8.0, &mut rng)?;
    let pred32 = Tensor::<f32>::rand_uniform(&[1, 1, 16, 16], 0.5, 8.0, &mut rng)?;
    let mask = vec![true; 256];
    let base = silog_loss(&pred32, &gt32, &mask, 1.0, 10.0)?.item()?;
    let scaled = silog_loss(&pred32.mul_scalar(3.5), &gt32, &mask, 1.0, 10.0)?.item()?;
    out.push(oracle_result("silog scale invariance at lambda=1 (32-bit)", f64::from((base - scaled).abs()), 1e-6));

    let mut tiny = ModelConfig::tst_s();
    tiny.decoder_channels = 8;
    tiny.sff_hidden = 8;
    for mode in [AttentionMode::Cross, AttentionMode::SelfAttention, AttentionMode::Disabled] {
        let m = Model::<f32>::new(&tiny.clone().with_attention(mode), 0)?;
        let diff = macs_oracle_check(&m, [1, 3, 64, 64])?;
        out.push(oracle_result(format!("analytic MACs vs counter ({mode})"), diff as f64, 0.0));
    }

    let mut err = 0f64;
    for (epoch, want) in [(0.0, 3e-4), (5.0, 1.5e-4), (10.0, 1.5e-4), (30.0, 7.5e-5), (70.0, 3.75e-5)] {
        err = err.max((lr_schedule(epoch, 3e-4, 10.0, 2.0, 0.5) - want).abs());
    }
    out.push(oracle_result("lr_schedule trace", err, 1e-12));

    let mut err = 0f64;
    for _ in 0..50 {
        let (theta, lr) = (rng.random_range(-3.0..3.0), rng.random_range(1e-4..1e-2));
        let grads: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (mut p, mut mo) = (vec![theta], Moments::zeros(1));
        let (mut m, mut v, mut want) = (0f64, 0f64, theta);
        for (t, &g) in grads.iter().enumerate() {
            adam_step("theta", &mut p, &[g], &mut mo, t as u64 + 1, lr, &AdamConfig::default())?;
            m = 0.9 * m + 0.1 * g;
            v = 0.99 * v + 0.01 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.99f64.powi(t as i32 + 1));
            want -= lr * mh / (vh.sqrt() + 1e-8);
        }
        err = err.max((p[0] - want).abs());
    }
    out.push(oracle_result("adam_step vs scalar reference", err, 1e-12));
    Ok(out)
}
