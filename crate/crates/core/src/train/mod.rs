//! Optimiser, learning-rate schedule, checkpoints, and the training and
//! evaluation loops.

mod adam;
mod checkpoint;
mod config;
mod schedule;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use checkpoint::{Checkpoint, CheckpointEntry, EntryKind, CHECKPOINT_VERSION};
pub use config::{DataSource, TrainConfig};
pub use schedule::{cycle_of, is_restart, lr_schedule};

use crate::data::{augment, collate, DepthSample};
use crate::error::{Error, Result};
use crate::loss_metrics::{silog_loss, EvalProtocol, Metrics, MetricsAccumulator};
use crate::model::{Model, INPUT_MULTIPLE};
use crate::tensor::{no_grad, NormMode, Tensor};

/// Shuffle/augmentation streams start here so they never meet the model
/// initialisation streams of the same seed.
const EPOCH_STREAM_BASE: u64 = 1 << 32;

pub const EPOCH_LOG_HEADER: &str =
    "epoch,lr,train_loss,val_delta1,val_delta2,val_delta3,val_abs_rel,val_sq_rel,val_rmse";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// Zero-based epoch index.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the step losses.
    pub train_loss: f64,
    pub step_losses: Vec<f64>,
    pub val: Option<Metrics>,
}

impl EpochLog {
    pub fn to_csv_row(&self) -> String {
        let mut s = format!("{},{:e},{:.8}", self.epoch, self.lr, self.train_loss);
        match &self.val {
            Some(m) => {
                for v in [m.delta1, m.delta2, m.delta3, m.abs_rel, m.sq_rel, m.rmse] {
                    let _ = write!(s, ",{v:.6}");
                }
            }
            None => s.push_str(",,,,,,"),
        }
        s
    }
}

/// Training state: model, optimiser, data and progress.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
    train: Vec<DepthSample>,
    val: Vec<DepthSample>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let (train, val) = load_data(&config)?;
        Self::with_data(config, train, val)
    }

    pub fn with_data(config: TrainConfig, train: Vec<DepthSample>, val: Vec<DepthSample>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Evaluation("training set is empty".into()));
        }
        let model = Model::new(&config.model, config.seed)?;
        let optimizer = Adam::new(&model, config.adam);
        Ok(Self { config, model, optimizer, epoch: 0, log: Vec::new(), train, val })
    }

    /// Continues from `checkpoint`, whose model configuration must match.
    pub fn resume(config: TrainConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let (train, val) = load_data(&config)?;
        Self::resume_with_data(config, checkpoint, train, val)
    }

    pub fn resume_with_data(
        config: TrainConfig,
        checkpoint: &Checkpoint,
        train: Vec<DepthSample>,
        val: Vec<DepthSample>,
    ) -> Result<Self> {
        let mut t = Self::with_data(config, train, val)?;
        checkpoint.restore_into(&t.model)?;
        if let Some(opt) = checkpoint.optimizer(&t.model, t.config.adam)? {
            t.optimizer = opt;
        }
        t.epoch = checkpoint.epoch as usize;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, self.epoch as u64, Some(&self.optimizer))
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let c = &self.config;
        lr_schedule(epoch as f64, c.lr, c.t0, c.t_mult, c.gamma)
    }

    /// One pass over the shuffled training set, then validation if a
    /// validation set exists. A non-finite loss or gradient aborts the epoch
    /// with [`Error::Numerical`] before the parameters change.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch;
        let lr = self.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(EPOCH_STREAM_BASE + epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let (mut weighted, mut seen) = (0.0, 0usize);
        let mut step_losses = Vec::new();
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            let samples = batch
                .iter()
                .map(|&i| augment(&self.train[i], &mut rng, &self.config.augment))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&DepthSample> = samples.iter().collect();
            let (x, gt, mask) = collate(&refs)?;
            let pred = self.model.forward(&x, NormMode::Train)?;
            if !pred.all_finite() {
                return Err(Error::Numerical(format!("non-finite prediction at epoch {epoch}, step {step}")));
            }
            let loss = silog_loss(&pred, &gt, &mask, self.config.lambda, self.config.alpha)?;
            let value = f64::from(loss.item()?);
            if !value.is_finite() {
                return Err(Error::Numerical(format!("loss is {value} at epoch {epoch}, step {step}")));
            }
            loss.backward()?;
            self.optimizer.step(&self.model, lr)?;
            step_losses.push(value);
            weighted += value * batch.len() as f64;
            seen += batch.len();
        }
        let val = if self.val.is_empty() {
            None
        } else {
            let protocol = EvalProtocol::new(self.config.model.max_depth);
            Some(evaluate(&self.model, &self.val, &protocol)?)
        };
        let entry = EpochLog { epoch, lr, train_loss: weighted / seen as f64, step_losses, val };
        self.epoch += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Trains until `config.epochs` are complete. With an output directory,
    /// rewrites `train_log.csv` after every epoch, saves
    /// `checkpoint_epoch{N}.tst` whenever a scheduler restart begins at
    /// epoch `N`, and saves `final.tst` at the end. On failure the files
    /// already written are left as they were.
    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| {})
    }

    /// [`Trainer::run`], calling `on_epoch` after each epoch is logged.
    pub fn run_with(&mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<()> {
        let out = self.config.out_dir.clone();
        if let Some(dir) = &out {
            fs::create_dir_all(dir)?;
        }
        while self.epoch < self.config.epochs {
            let entry = self.run_epoch()?;
            on_epoch(&entry);
            if let Some(dir) = &out {
                fs::write(dir.join("train_log.csv"), self.log_csv())?;
                if is_restart(self.epoch, self.config.t0, self.config.t_mult) {
                    self.checkpoint().save(dir.join(format!("checkpoint_epoch{:04}.tst", self.epoch)))?;
                }
            }
        }
        if let Some(dir) = &out {
            self.checkpoint().save(final_checkpoint_path(dir))?;
        }
        Ok(())
    }

    pub fn log_csv(&self) -> String {
        let mut s = format!("{EPOCH_LOG_HEADER}\n");
        for e in &self.log {
            s.push_str(&e.to_csv_row());
            s.push('\n');
        }
        s
    }
}

pub fn final_checkpoint_path(dir: &std::path::Path) -> PathBuf {
    dir.join("final.tst")
}

fn load_data(config: &TrainConfig) -> Result<(Vec<DepthSample>, Vec<DepthSample>)> {
    let max_depth = config.model.max_depth as f32;
    let train = config.train_data.load(max_depth)?;
    let val = match &config.val_data {
        Some(src) => src.load(max_depth)?,
        None => Vec::new(),
    };
    Ok((train, val))
}

/// Builds a trainer from `config` and runs it to completion.
pub fn train(config: TrainConfig) -> Result<Trainer> {
    let mut t = Trainer::new(config)?;
    t.run()?;
    Ok(t)
}

/// Depth `[1, H, W]` for an RGB image `[3, H, W]`, BN in eval mode. Inputs
/// whose sides are not multiples of 32 are edge-padded up to the next
/// multiple and the prediction is cropped back.
pub fn predict_depth(model: &Model<f32>, rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = rgb.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(crate::error::usage_err(format!("expected an RGB image [3, H, W], got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let (hp, wp) = (h.div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE, w.div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE);
    let src = rgb.data();
    let mut padded = Vec::with_capacity(3 * hp * wp);
    for c in 0..3 {
        for r in 0..hp {
            let row = &src[(c * h + r.min(h - 1)) * w..][..w];
            padded.extend((0..wp).map(|col| row[col.min(w - 1)]));
        }
    }
    let x = Tensor::new(padded, &[1, 3, hp, wp])?;
    let y = no_grad(|| model.forward(&x, NormMode::Eval))?;
    let out: Vec<f32> = (0..h).flat_map(|r| y.data()[r * wp..r * wp + w].iter().copied()).collect();
    Tensor::new(out, &[1, h, w])
}

/// Pixel-weighted metrics over `samples`.
pub fn evaluate(model: &Model<f32>, samples: &[DepthSample], protocol: &EvalProtocol) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Evaluation("cannot evaluate an empty dataset".into()));
    }
    let mut acc = MetricsAccumulator::new();
    for s in samples {
        let (h, w) = (s.height(), s.width());
        let pred = predict_depth(model, &s.rgb)?.reshape(&[1, 1, h, w])?;
        acc.add(&pred, &s.depth.reshape(&[1, 1, h, w])?, &s.mask, protocol)?;
    }
    acc.finish()
}
