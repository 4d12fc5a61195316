use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AdamConfig;
use crate::data::{read_dataset, synth_scene, AugmentConfig, DepthSample};
use crate::error::{config_err, Result};
use crate::kv::{self, parse_size};
use crate::loss_metrics::{DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::model::{ModelConfig, Variant};

/// Where samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// `count` procedurally generated scenes; scene seeds are drawn from `seed`.
    Synthetic { count: usize, height: usize, width: usize, seed: u64 },
    /// Every `*_rgb.tstf` / `*_depth.tstf` pair in a directory.
    Directory(PathBuf),
}

impl DataSource {
    pub fn load(&self, max_depth: f32) -> Result<Vec<DepthSample>> {
        match self {
            Self::Synthetic { count, height, width, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count)
                    .map(|_| synth_scene(rng.random(), *height, *width, max_depth))
                    .collect()
            }
            Self::Directory(dir) => read_dataset(dir),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds model initialisation and the per-epoch shuffle/augmentation streams.
    pub seed: u64,
    pub lr: f64,
    pub adam: AdamConfig,
    pub t0: f64,
    pub t_mult: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub augment: AugmentConfig,
    pub train_data: DataSource,
    pub val_data: Option<DataSource>,
    /// Checkpoints and the epoch log go here when set.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            epochs: 200,
            batch_size: 8,
            seed: 0,
            lr: 3e-4,
            adam: AdamConfig::default(),
            t0: 10.0,
            t_mult: 2.0,
            gamma: 0.5,
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            augment: AugmentConfig::default(),
            train_data: DataSource::Synthetic { count: 256, height: 64, width: 64, seed: 0 },
            val_data: Some(DataSource::Synthetic { count: 32, height: 64, width: 64, seed: 1 }),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err("epochs and batch_size must be positive"));
        }
        if !(self.t0 >= 1.0 && self.t_mult >= 1.0 && self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config_err(format!(
                "scheduler needs t0 >= 1, t_mult >= 1 and 0 < gamma <= 1, got {}, {}, {}",
                self.t0, self.t_mult, self.gamma
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("learning rate must be positive, got {}", self.lr)));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(config_err("adam needs betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }

    /// Parses a training config file. Relative paths resolve against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_kv_text(&text, base)
    }

    /// Model keys (see [`ModelConfig::apply`]) and training keys may be
    /// mixed freely; `variant` picks the base model.
    pub fn from_kv_text(text: &str, base_dir: &Path) -> Result<Self> {
        let pairs = kv::parse(text)?;
        let variant: Variant = pairs
            .iter()
            .find(|(k, _)| k == "variant")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Variant::TstS);
        let mut cfg = Self::new(ModelConfig::new(variant));
        let mut train = DataSpecBuilder::new(cfg.train_data.clone());
        let mut val = DataSpecBuilder::new(cfg.val_data.clone().expect("default has validation"));
        let mut val_enabled = true;
        for (k, v) in &pairs {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "variant" => {}
                "epochs" => cfg.epochs = num(k, v)?,
                "batch_size" => cfg.batch_size = num(k, v)?,
                "seed" => cfg.seed = num(k, v)?,
                "lr" => cfg.lr = num(k, v)?,
                "beta1" => cfg.adam.beta1 = num(k, v)?,
                "beta2" => cfg.adam.beta2 = num(k, v)?,
                "adam_eps" => cfg.adam.eps = num(k, v)?,
                "t0" => cfg.t0 = num(k, v)?,
                "t_mult" => cfg.t_mult = num(k, v)?,
                "gamma" => cfg.gamma = num(k, v)?,
                "silog_lambda" => cfg.lambda = num(k, v)?,
                "silog_alpha" => cfg.alpha = num(k, v)?,
                "aug_hflip" => cfg.augment.p_hflip = num(k, v)?,
                "aug_color" => cfg.augment.p_color = num(k, v)?,
                "aug_cutdepth" => cfg.augment.p_cutdepth = num(k, v)?,
                "aug_crop" => cfg.augment.crop = if v == "none" { None } else { Some(parse_size(v)?) },
                "out_dir" => cfg.out_dir = Some(base_dir.join(v)),
                "train_data" => train.source(v, base_dir),
                "train_count" => train.count = Some(num(k, v)?),
                "train_size" => train.size = Some(parse_size(v)?),
                "train_seed" => train.seed = Some(num(k, v)?),
                "val_data" if v == "none" => val_enabled = false,
                "val_data" => val.source(v, base_dir),
                "val_count" => val.count = Some(num(k, v)?),
                "val_size" => val.size = Some(parse_size(v)?),
                "val_seed" => val.seed = Some(num(k, v)?),
                _ => {
                    if !cfg.model.apply(k, v)? {
                        return Err(config_err(format!("unknown config key `{k}`")));
                    }
                }
            }
        }
        cfg.train_data = train.build()?;
        cfg.val_data = if val_enabled { Some(val.build()?) } else { None };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text accepted by [`TrainConfig::from_kv_text`].
    pub fn to_kv_text(&self) -> String {
        let mut s = self.model.to_kv_text();
        let a = &self.augment;
        let crop = a.crop.map_or("none".to_string(), |(h, w)| format!("{h}x{w}"));
        let _ = write!(
            s,
            "epochs = {}\nbatch_size = {}\nseed = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}\nadam_eps = {}\n\
             t0 = {}\nt_mult = {}\ngamma = {}\nsilog_lambda = {}\nsilog_alpha = {}\n\
             aug_hflip = {}\naug_color = {}\naug_cutdepth = {}\naug_crop = {crop}\n",
            self.epochs,
            self.batch_size,
            self.seed,
            self.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.t0,
            self.t_mult,
            self.gamma,
            self.lambda,
            self.alpha,
            a.p_hflip,
            a.p_color,
            a.p_cutdepth,
        );
        write_source(&mut s, "train", Some(&self.train_data));
        write_source(&mut s, "val", self.val_data.as_ref());
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {}", dir.display());
        }
        s
    }
}

fn write_source(s: &mut String, prefix: &str, src: Option<&DataSource>) {
    match src {
        None => {
            let _ = writeln!(s, "{prefix}_data = none");
        }
        Some(DataSource::Directory(p)) => {
            let _ = writeln!(s, "{prefix}_data = {}", p.display());
        }
        Some(DataSource::Synthetic { count, height, width, seed }) => {
            let _ = writeln!(
                s,
                "{prefix}_data = synth\n{prefix}_count = {count}\n{prefix}_size = {height}x{width}\n{prefix}_seed = {seed}"
            );
        }
    }
}

fn num<N: FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| config_err(format!("`{key}` expects a number, got `{v}`")))
}

struct DataSpecBuilder {
    dir: Option<PathBuf>,
    count: Option<usize>,
    size: Option<(usize, usize)>,
    seed: Option<u64>,
    default: DataSource,
}

impl DataSpecBuilder {
    fn new(default: DataSource) -> Self {
        Self { dir: None, count: None, size: None, seed: None, default }
    }

    fn source(&mut self, v: &str, base: &Path) {
        self.dir = (v != "synth").then(|| base.join(v));
    }

    fn build(self) -> Result<DataSource> {
        if let Some(dir) = self.dir {
            if self.count.is_some() || self.size.is_some() || self.seed.is_some() {
                return Err(config_err(format!(
                    "count/size/seed only apply to synthetic data, not {}",
                    dir.display()
                )));
            }
            return Ok(DataSource::Directory(dir));
        }
        let DataSource::Synthetic { count, height, width, seed } = self.default else {
            unreachable!("defaults are synthetic")
        };
        let (height, width) = self.size.unwrap_or((height, width));
        Ok(DataSource::Synthetic {
            count: self.count.unwrap_or(count),
            height,
            width,
            seed: self.seed.unwrap_or(seed),
        })
    }
}
