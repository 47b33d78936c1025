use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::diversity::DiversityConfig;
use crate::error::{Error, Result};
use crate::gan::{
    build_model, regularized_layer_count, sample, train, GanModel, MetricsRecord, TrainObserver,
};
use crate::gradcheck::{self, CheckReport};
use crate::metrics::{cosine_stats, mode_coverage, wasserstein1d, COSINE_BINS};
use crate::nn::{Mode, Network};

pub const HISTORY_FILE: &str = "history.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.bin";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const GRID_COLUMNS: usize = 8;

/// Latent seed for periodic dumps, so successive dumps show the same draws.
fn dump_seed(seed: u64) -> u64 {
    seed ^ 0xd00d_5eed
}

struct RunObserver {
    history: BufWriter<File>,
    out: PathBuf,
    checkpoint_every: u64,
    sample_every: u64,
    sample_count: usize,
    seed: u64,
}

impl TrainObserver for RunObserver {
    fn on_record(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.history, "{}", record.csv_row())?;
        Ok(())
    }

    fn on_step(&mut self, model: &GanModel) -> Result<()> {
        if self.checkpoint_every > 0 && model.step.is_multiple_of(self.checkpoint_every) {
            model.save(&self.out.join(format!("checkpoint_{:06}.bin", model.step)))?;
        }
        if self.sample_every > 0 && model.step.is_multiple_of(self.sample_every) {
            let samples = sample(&model.generator, self.sample_count, dump_seed(self.seed))?;
            write_samples(
                &self.out.join(format!("samples_{:06}", model.step)),
                samples.view(),
            )?;
        }
        Ok(())
    }
}

pub fn cmd_train(cfg: &ExperimentConfig, threads: usize) -> Result<()> {
    let train_cfg = cfg.train_config(threads)?;
    let arch = cfg.architecture()?;
    let dataset = cfg.load_dataset()?;
    let model = build_model(&train_cfg, &dataset, arch)?;
    let columns = regularized_layer_count(&model, &train_cfg.diversity)?;

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.resolved"), cfg.render())?;
    let mut history = BufWriter::new(File::create(cfg.out.join(HISTORY_FILE))?);
    writeln!(history, "{}", MetricsRecord::csv_header(columns))?;
    let mut observer = RunObserver {
        history,
        out: cfg.out.clone(),
        checkpoint_every: cfg.checkpoint_every,
        sample_every: cfg.sample_every,
        sample_count: cfg.sample_count,
        seed: cfg.seed,
    };
    let result = train(&train_cfg, &dataset, model, &mut observer);
    observer.history.flush()?;
    let outcome = result?;
    outcome.model.save(&cfg.out.join(FINAL_CHECKPOINT))?;
    println!(
        "trained {} steps; history in {}",
        outcome.model.step,
        cfg.out.join(HISTORY_FILE).display()
    );
    Ok(())
}

pub fn print_reports(reports: &[CheckReport]) {
    for r in reports {
        println!(
            "{} {:<62} max_err={:.3e} threshold={:.0e} cases={} ({})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.threshold,
            r.cases,
            r.detail
        );
    }
}

/// Runs every gradient suite; fails with the list of failing checks.
pub fn cmd_gradcheck(cfg: &ExperimentConfig, corrupt: bool) -> Result<Vec<CheckReport>> {
    let div = DiversityConfig {
        tau: cfg.tau,
        lambda_g: cfg.lambda_g,
        lambda_d: cfg.lambda_d,
        variant: cfg.variant,
        layers: cfg.layers.clone(),
    };
    div.validate()?;
    let reports = gradcheck::run_all(&div, cfg.seed, corrupt)?;
    print_reports(&reports);
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(Error::Usage(format!(
            "gradient checks failed: {}",
            failed.join("; ")
        )))
    }
}

#[derive(Serialize)]
struct SummaryLine {
    record: &'static str,
    checkpoint: String,
    w_div: f64,
    real_score_mean: f64,
    fake_score_mean: f64,
    n_modes: Option<usize>,
    covered: Option<usize>,
    hq_fraction: Option<f64>,
}

#[derive(Serialize)]
struct CosineLine {
    record: &'static str,
    network: &'static str,
    layer: usize,
    skipped: bool,
    max_offdiag: Option<f64>,
    mean_abs: Option<f64>,
    histogram: Option<[u64; COSINE_BINS]>,
}

fn scores(disc: &Network, x: &Array2<f64>) -> Result<Vec<f64>> {
    let mut d = disc.clone();
    Ok(d.forward(x, Mode::Eval)?.output().column(0).to_vec())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluates a checkpoint against the configured dataset and writes JSON lines.
/// Returns the path written.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<PathBuf> {
    let train_cfg = cfg.train_config(1)?;
    let model = GanModel::load(checkpoint, train_cfg.adam()?)?;
    let dataset = cfg.load_dataset()?;
    if dataset.item_dim() != model.generator.output_dim() {
        return Err(Error::config(
            "dataset",
            format!(
                "checkpoint generator emits {} features, dataset items have {}",
                model.generator.output_dim(),
                dataset.item_dim()
            ),
        ));
    }
    if cfg.eval_batches == 0 || cfg.batch_size == 0 {
        return Err(Error::config(
            "eval_batches",
            "eval_batches and batch_size must be >= 1",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut real_scores = Vec::new();
    let mut fake_scores = Vec::new();
    for b in 0..cfg.eval_batches {
        let idx =
            rand::seq::index::sample(&mut rng, dataset.len(), cfg.batch_size.min(dataset.len()))
                .into_vec();
        let real = dataset.items.select(Axis(0), &idx);
        let fake = sample(
            &model.generator,
            cfg.batch_size,
            cfg.seed.wrapping_add(1 + b as u64),
        )?;
        real_scores.extend(scores(&model.discriminator, &real)?);
        fake_scores.extend(scores(&model.discriminator, &fake)?);
    }
    let coverage = match &dataset.modes {
        Some(modes) => {
            let samples = sample(&model.generator, cfg.eval_samples, dump_seed(cfg.seed))?;
            Some((modes.centers().len(), mode_coverage(samples.view(), modes)?))
        }
        None => None,
    };

    let mut lines = vec![serde_json::to_string(&SummaryLine {
        record: "summary",
        checkpoint: checkpoint.display().to_string(),
        w_div: wasserstein1d(&real_scores, &fake_scores)?,
        real_score_mean: mean(&real_scores),
        fake_score_mean: mean(&fake_scores),
        n_modes: coverage.as_ref().map(|c| c.0),
        covered: coverage.as_ref().map(|c| c.1.covered),
        hq_fraction: coverage.as_ref().map(|c| c.1.hq_fraction),
    })
    .map_err(|e| Error::Usage(e.to_string()))?];
    for (name, net) in [
        ("discriminator", &model.discriminator),
        ("generator", &model.generator),
    ] {
        for layer in 0..net.num_weight_layers() {
            let stats = cosine_stats(&net.kernel_matrix(layer)?);
            let line = CosineLine {
                record: "cosine",
                network: name,
                layer,
                skipped: stats.is_none(),
                max_offdiag: stats.as_ref().map(|s| s.max_offdiag),
                mean_abs: stats.as_ref().map(|s| s.mean_abs),
                histogram: stats.as_ref().map(|s| s.histogram),
            };
            lines.push(serde_json::to_string(&line).map_err(|e| Error::Usage(e.to_string()))?);
        }
    }

    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(EVAL_FILE);
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(&path, &text)?;
    print!("{text}");
    Ok(path)
}

/// Byte for a pixel value in [−1, 1].
pub fn pixel_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Square side of a flattened single-channel image, if `dim` is a perfect square > 1.
fn image_side(dim: usize) -> Option<usize> {
    let side = (dim as f64).sqrt().round() as usize;
    (dim > 4 && side * side == dim).then_some(side)
}

/// PGM (P5) grid with `GRID_COLUMNS` images per row; unused cells are black.
pub fn pgm_grid(samples: ArrayView2<f64>, side: usize) -> Vec<u8> {
    let n = samples.nrows();
    let rows = n.div_ceil(GRID_COLUMNS);
    let (width, height) = (GRID_COLUMNS * side, rows * side);
    let mut pixels = vec![0u8; width * height];
    for (k, item) in samples.outer_iter().enumerate() {
        let (gr, gc) = (k / GRID_COLUMNS, k % GRID_COLUMNS);
        for r in 0..side {
            for c in 0..side {
                pixels[(gr * side + r) * width + gc * side + c] = pixel_byte(item[r * side + c]);
            }
        }
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels);
    bytes
}

/// One CSV row per sample, no header.
pub fn csv_points(samples: ArrayView2<f64>) -> String {
    let mut s = String::new();
    for row in samples.outer_iter() {
        let cols: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

/// Writes `base.pgm` for square image samples, `base.csv` otherwise. Returns the path.
pub fn write_samples(base: &Path, samples: ArrayView2<f64>) -> Result<PathBuf> {
    match image_side(samples.ncols()) {
        Some(side) => {
            let path = base.with_extension("pgm");
            fs::write(&path, pgm_grid(samples, side))?;
            Ok(path)
        }
        None => {
            let path = base.with_extension("csv");
            fs::write(&path, csv_points(samples))?;
            Ok(path)
        }
    }
}

pub fn cmd_dump_samples(checkpoint: &Path, n: usize, out: &Path, seed: u64) -> Result<PathBuf> {
    if n == 0 {
        return Err(Error::Usage("--n must be >= 1".into()));
    }
    let model = GanModel::load(checkpoint, crate::nn::AdamConfig::new(1e-4, 0.0, 0.9)?)?;
    let samples = sample(&model.generator, n, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let base = match out.extension() {
        Some(_) => out.with_extension(""),
        None => out.to_path_buf(),
    };
    let path = write_samples(&base, samples.view())?;
    println!("wrote {n} samples to {}", path.display());
    Ok(path)
}
