//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{gaussian_ring, grid25, load_idx, Dataset};
use crate::diversity::{DiversityConfig, LayerSelection, Variant};
use crate::error::{Error, Result};
use crate::gan::{Architecture, GeneratorLoss, Regularizer, TrainConfig};

/// Every key accepted in a config file or via `--set`.
pub const KEYS: &[&str] = &[
    "seed",
    "out",
    "lr",
    "beta1",
    "beta2",
    "batch_size",
    "epochs",
    "max_steps",
    "latent_dim",
    "tau",
    "lambda_g",
    "lambda_d",
    "variant",
    "layers",
    "regularizer",
    "clip",
    "power_iters",
    "generator_loss",
    "eval_every",
    "checkpoint_every",
    "sample_every",
    "sample_count",
    "dataset",
    "data_seed",
    "ring_modes",
    "ring_radius",
    "ring_sigma",
    "grid_spacing",
    "grid_sigma",
    "n_samples",
    "idx_images",
    "idx_labels",
    "hidden_dim",
    "hidden_layers",
    "conv_width",
    "eval_batches",
    "eval_samples",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 means no cap.
    pub max_steps: u64,
    pub latent_dim: usize,
    pub tau: f64,
    pub lambda_g: f64,
    pub lambda_d: f64,
    pub variant: Variant,
    pub layers: LayerSelection,
    pub regularizer: String,
    pub clip: f64,
    pub power_iters: usize,
    pub generator_loss: GeneratorLoss,
    pub eval_every: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// 0 disables periodic sample dumps.
    pub sample_every: u64,
    pub sample_count: usize,
    pub dataset: String,
    /// Dataset sampling seed; falls back to `seed`.
    pub data_seed: Option<u64>,
    pub ring_modes: usize,
    pub ring_radius: f64,
    pub ring_sigma: f64,
    pub grid_spacing: f64,
    pub grid_sigma: f64,
    pub n_samples: usize,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    /// First discriminator conv width for image data. Not a published value.
    pub conv_width: usize,
    pub eval_batches: usize,
    pub eval_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let div = DiversityConfig::default();
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            lr: train.lr,
            beta1: train.beta1,
            beta2: train.beta2,
            batch_size: train.batch_size,
            epochs: train.epochs,
            max_steps: 0,
            latent_dim: train.latent_dim,
            tau: div.tau,
            lambda_g: div.lambda_g,
            lambda_d: div.lambda_d,
            variant: div.variant,
            layers: div.layers,
            regularizer: "direal".into(),
            clip: 0.01,
            power_iters: train.power_iters,
            generator_loss: train.generator_loss,
            eval_every: train.eval_every,
            checkpoint_every: 0,
            sample_every: 500,
            sample_count: 64,
            dataset: "ring".into(),
            data_seed: None,
            ring_modes: 8,
            ring_radius: 2.0,
            ring_sigma: 0.05,
            grid_spacing: 2.0,
            grid_sigma: 0.05,
            n_samples: 8192,
            idx_images: None,
            idx_labels: None,
            hidden_dim: 128,
            hidden_layers: 2,
            conv_width: 32,
            eval_batches: 30,
            eval_samples: 2048,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_variant(key: &str, value: &str) -> Result<Variant> {
    value
        .parse()
        .map_err(|e: Error| Error::config(key, e.to_string()))
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys and unparsable values are config errors naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "lambda_g" => self.lambda_g = parse(key, value)?,
            "lambda_d" => self.lambda_d = parse(key, value)?,
            "variant" => self.variant = parse_variant(key, value)?,
            "layers" => {
                self.layers = value
                    .parse()
                    .map_err(|e: Error| Error::config(key, e.to_string()))?
            }
            "regularizer" => {
                Regularizer::parse(value, 1.0).map_err(|e| Error::config(key, e.to_string()))?;
                self.regularizer = value.to_string();
            }
            "clip" => self.clip = parse(key, value)?,
            "power_iters" => self.power_iters = parse(key, value)?,
            "generator_loss" => {
                self.generator_loss = value
                    .parse()
                    .map_err(|e: Error| Error::config(key, e.to_string()))?
            }
            "eval_every" => self.eval_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "sample_every" => self.sample_every = parse(key, value)?,
            "sample_count" => self.sample_count = parse(key, value)?,
            "dataset" => match value {
                "ring" | "grid" | "idx" => self.dataset = value.to_string(),
                _ => {
                    return Err(Error::config(
                        key,
                        format!("expected ring, grid or idx, got {value:?}"),
                    ))
                }
            },
            "data_seed" => self.data_seed = Some(parse(key, value)?),
            "ring_modes" => self.ring_modes = parse(key, value)?,
            "ring_radius" => self.ring_radius = parse(key, value)?,
            "ring_sigma" => self.ring_sigma = parse(key, value)?,
            "grid_spacing" => self.grid_spacing = parse(key, value)?,
            "grid_sigma" => self.grid_sigma = parse(key, value)?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "idx_images" => self.idx_images = Some(PathBuf::from(value)),
            "idx_labels" => self.idx_labels = Some(PathBuf::from(value)),
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "hidden_layers" => self.hidden_layers = parse(key, value)?,
            "conv_width" => self.conv_width = parse(key, value)?,
            "eval_batches" => self.eval_batches = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped;
    /// errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::Config { key, message } => Error::Config {
                    key,
                    message: format!("{source} line {}: {message}", n + 1),
                },
                other => other,
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(at(Error::config(line, "expected `key = value`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(at(Error::config("", "missing key")));
            }
            self.set(key, value).map_err(at)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
        self.set(key.trim(), value.trim())
    }

    /// Makes every path absolute and checks that input files exist.
    pub fn resolve_paths(&mut self) -> Result<()> {
        let absolute = |key: &str, p: &Path| {
            std::path::absolute(p).map_err(|e| Error::config(key, format!("{}: {e}", p.display())))
        };
        self.out = absolute("out", &self.out)?;
        if self.dataset == "idx" {
            let images = self
                .idx_images
                .as_deref()
                .ok_or_else(|| Error::config("idx_images", "required when dataset = idx"))?;
            let images = absolute("idx_images", images)?;
            if !images.is_file() {
                return Err(Error::config(
                    "idx_images",
                    format!("no such file: {}", images.display()),
                ));
            }
            self.idx_images = Some(images);
        }
        if let Some(labels) = self.idx_labels.take() {
            let labels = absolute("idx_labels", &labels)?;
            if self.dataset == "idx" && !labels.is_file() {
                return Err(Error::config(
                    "idx_labels",
                    format!("no such file: {}", labels.display()),
                ));
            }
            self.idx_labels = Some(labels);
        }
        Ok(())
    }

    pub fn regularizer(&self) -> Result<Regularizer> {
        Regularizer::parse(&self.regularizer, self.clip)
    }

    /// The training configuration, validated.
    pub fn train_config(&self, threads: usize) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            latent_dim: self.latent_dim,
            diversity: DiversityConfig {
                tau: self.tau,
                lambda_g: self.lambda_g,
                lambda_d: self.lambda_d,
                variant: self.variant,
                layers: self.layers.clone(),
            },
            regularizer: self.regularizer()?,
            power_iters: self.power_iters,
            generator_loss: self.generator_loss,
            seed: self.seed,
            eval_every: self.eval_every,
            dataset: self.dataset.clone(),
            threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        if self.dataset == "idx" {
            if self.conv_width == 0 {
                return Err(Error::config("conv_width", "must be >= 1"));
            }
            Ok(Architecture::Dcgan {
                width: self.conv_width,
            })
        } else {
            if self.hidden_dim == 0 {
                return Err(Error::config("hidden_dim", "must be >= 1"));
            }
            Ok(Architecture::Mlp {
                hidden: self.hidden_dim,
                depth: self.hidden_layers,
            })
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let seed = self.data_seed.unwrap_or(self.seed);
        match self.dataset.as_str() {
            "ring" => gaussian_ring(
                self.ring_modes,
                self.ring_radius,
                self.ring_sigma,
                self.n_samples,
                seed,
            ),
            "grid" => grid25(self.grid_spacing, self.grid_sigma, self.n_samples, seed),
            _ => {
                let images = self
                    .idx_images
                    .as_deref()
                    .ok_or_else(|| Error::config("idx_images", "required when dataset = idx"))?;
                load_idx(images, self.idx_labels.as_deref())
            }
        }
    }

    /// The effective configuration in file syntax, every key listed.
    pub fn render(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("lr", self.lr.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("max_steps", self.max_steps.to_string());
        put("latent_dim", self.latent_dim.to_string());
        put("tau", self.tau.to_string());
        put("lambda_g", self.lambda_g.to_string());
        put("lambda_d", self.lambda_d.to_string());
        put("variant", self.variant.to_string());
        put("layers", self.layers.to_string());
        put("regularizer", self.regularizer.clone());
        put("clip", self.clip.to_string());
        put("power_iters", self.power_iters.to_string());
        put("generator_loss", self.generator_loss.to_string());
        put("eval_every", self.eval_every.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("sample_every", self.sample_every.to_string());
        put("sample_count", self.sample_count.to_string());
        put("dataset", self.dataset.clone());
        if let Some(d) = self.data_seed {
            put("data_seed", d.to_string());
        }
        put("ring_modes", self.ring_modes.to_string());
        put("ring_radius", self.ring_radius.to_string());
        put("ring_sigma", self.ring_sigma.to_string());
        put("grid_spacing", self.grid_spacing.to_string());
        put("grid_sigma", self.grid_sigma.to_string());
        put("n_samples", self.n_samples.to_string());
        if let Some(p) = path(&self.idx_images) {
            put("idx_images", p);
        }
        if let Some(p) = path(&self.idx_labels) {
            put("idx_labels", p);
        }
        put("hidden_dim", self.hidden_dim.to_string());
        put("hidden_layers", self.hidden_layers.to_string());
        put("conv_width", self.conv_width.to_string());
        put("eval_batches", self.eval_batches.to_string());
        put("eval_samples", self.eval_samples.to_string());
        s
    }
}
