//! `tst`: train, evaluate, profile, benchmark and run token-sharing depth models.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use tst_core::data::{read_dataset, read_raw_f32, write_depth_pgm};
use tst_core::kv::parse_size;
use tst_core::loss_metrics::{Crop, EvalProtocol, METRICS_CSV_HEADER};
use tst_core::model::{check_input_size, AttentionMode, Model, ModelConfig, Variant};
use tst_core::profiler::{benchmark_fps, count_macs};
use tst_core::selftest;
use tst_core::train::{evaluate, predict_depth, Checkpoint, Trainer, TrainConfig, EPOCH_LOG_HEADER};
use tst_core::Error;

#[derive(Parser)]
#[command(name = "tst", version, about = "Token-sharing transformer for monocular depth estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a `key = value` config file; prints the epoch log as CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a directory of `*_rgb.tstf` / `*_depth.tstf` pairs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "none")]
        crop: Crop,
    },
    /// Per-layer parameter and MAC counts.
    Profile {
        #[arg(long)]
        variant: Variant,
        /// Input size as HxW.
        #[arg(long, value_parser = size_arg)]
        shape: (usize, usize),
        #[arg(long, default_value = "cross")]
        attention: AttentionMode,
        /// Emit CSV instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Inference throughput of a freshly initialised model.
    Bench {
        #[arg(long)]
        variant: Variant,
        #[arg(long, value_parser = size_arg)]
        shape: (usize, usize),
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[arg(long, default_value = "cross")]
        attention: AttentionMode,
        #[arg(long)]
        csv: bool,
    },
    /// Predict depth for one RGB image stored as a `[3, H, W]` raw f32 tensor.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// 16-bit PGM output, millimetres.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient and oracle suites.
    Selftest,
}

fn size_arg(s: &str) -> Result<(usize, usize), String> {
    parse_size(s).map_err(|e| e.to_string())
}

/// Raised when the self-test ran but some check failed.
#[derive(Debug)]
struct SelfTestFailed(usize);

impl std::fmt::Display for SelfTestFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} self-test checks failed", self.0)
    }
}

impl std::error::Error for SelfTestFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<SelfTestFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Usage(_)) => 1,
        Some(Error::Numerical(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, resume } => {
            let cfg = TrainConfig::from_file(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut trainer = match resume {
                Some(path) => Trainer::resume(cfg, &Checkpoint::load(&path)?)?,
                None => Trainer::new(cfg)?,
            };
            println!("{EPOCH_LOG_HEADER}");
            trainer.run_with(|e| println!("{}", e.to_csv_row()))?;
        }
        Command::Eval { ckpt, data, crop } => {
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let model = ck.build_model()?;
            let samples = read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            let protocol = EvalProtocol::new(model.config.max_depth).with_crop(crop);
            let metrics = evaluate(&model, &samples, &protocol)?;
            println!("{METRICS_CSV_HEADER}");
            println!("{}", metrics.to_csv_row(&ck.variant));
        }
        Command::Profile { variant, shape, attention, csv } => {
            let model = build(variant, attention, shape)?;
            let report = count_macs(&model, [1, 3, shape.0, shape.1])?;
            print!("{}", if csv { report.to_csv() } else { report.to_table() });
        }
        Command::Bench { variant, shape, iters, warmup, attention, csv } => {
            let model = build(variant, attention, shape)?;
            let report = benchmark_fps(&model, [1, 3, shape.0, shape.1], warmup, iters)?;
            print!("{}", if csv { report.to_csv() } else { report.to_table() });
        }
        Command::Predict { ckpt, image, out } => {
            let model = Checkpoint::load(&ckpt)?.build_model()?;
            let rgb = read_raw_f32(&image).with_context(|| format!("reading {}", image.display()))?;
            let rgb = match *rgb.shape() {
                [3, h, w] | [1, 3, h, w] => rgb.reshape(&[3, h, w])?,
                _ => return Err(anyhow!(Error::Usage(format!("expected a [3, H, W] image, got {:?}", rgb.shape())))),
            };
            let depth = predict_depth(&model, &rgb)?;
            write_depth_pgm(&out, &depth)?;
        }
        Command::Selftest => {
            let report = selftest::run_all()?;
            print!("{}", report.to_table());
            let failed = report.failures().len();
            if failed > 0 {
                return Err(SelfTestFailed(failed).into());
            }
        }
    }
    Ok(())
}

fn build(variant: Variant, attention: AttentionMode, (h, w): (usize, usize)) -> Result<Model<f32>> {
    check_input_size(h, w)?;
    Ok(Model::new(&ModelConfig::new(variant).with_attention(attention), 0)?)
}
