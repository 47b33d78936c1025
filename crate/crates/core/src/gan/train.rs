use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::losses::{d_loss, d_loss_grads, g_loss, g_loss_grad, GeneratorLoss};
use super::model::{GanModel, Regularizer};
use crate::data::Dataset;
use crate::diversity::{apply_diversity, network_diversity, DiversityConfig};
use crate::error::{Error, Result};
use crate::metrics::{cosine_stats, wasserstein1d};
use crate::nn::{adam_step, AdamConfig, Mode, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops training after this many steps when set.
    pub max_steps: Option<u64>,
    pub latent_dim: usize,
    pub diversity: DiversityConfig,
    pub regularizer: Regularizer,
    pub power_iters: usize,
    pub generator_loss: GeneratorLoss,
    pub seed: u64,
    pub eval_every: u64,
    pub dataset: String,
    /// Worker threads for per-layer work; 0 and 1 both mean single-threaded.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            batch_size: 64,
            epochs: 100,
            max_steps: None,
            latent_dim: 8,
            diversity: DiversityConfig::default(),
            regularizer: Regularizer::Direal,
            power_iters: 1,
            generator_loss: GeneratorLoss::NonSaturating,
            seed: 0,
            eval_every: 1,
            dataset: "ring".into(),
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> Result<AdamConfig> {
        AdamConfig::new(self.lr, self.beta1, self.beta2)
    }

    pub fn validate(&self) -> Result<()> {
        self.adam()?;
        self.diversity.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be >= 1"));
        }
        if self.regularizer.uses_spectral() && self.power_iters == 0 {
            return Err(Error::config("power_iters", "must be >= 1"));
        }
        Ok(())
    }
}

/// Scalars recorded after one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub j_d: f64,
    pub j_g: f64,
    /// W₁ between the step's real and fake discriminator scores.
    pub w_div: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    /// Max off-diagonal |cos| of each regularized layer: discriminator layers
    /// first, then generator layers. `None` for single-filter layers.
    pub max_cos: Vec<Option<f64>>,
}

impl MetricsRecord {
    pub fn csv_header(layer_columns: usize) -> String {
        let mut cols: Vec<String> = [
            "step",
            "d_loss",
            "g_loss",
            "J_D",
            "J_G",
            "w_div",
            "d_real_mean",
            "d_fake_mean",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend((0..layer_columns).map(|i| format!("max_cos_l{i}")));
        cols.join(",")
    }

    /// Values use Rust's shortest round-trip float formatting; skipped layers are `NA`.
    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.step.to_string(),
            self.d_loss.to_string(),
            self.g_loss.to_string(),
            self.j_d.to_string(),
            self.j_g.to_string(),
            self.w_div.to_string(),
            self.d_real_mean.to_string(),
            self.d_fake_mean.to_string(),
        ];
        cols.extend(self.max_cos.iter().map(|c| match c {
            Some(v) => v.to_string(),
            None => "NA".into(),
        }));
        cols.join(",")
    }

    pub fn is_finite(&self) -> bool {
        [
            self.d_loss,
            self.g_loss,
            self.j_d,
            self.j_g,
            self.w_div,
            self.d_real_mean,
            self.d_fake_mean,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.max_cos.iter().flatten().all(|v| v.is_finite())
    }
}

/// Number of `max_cos` columns a model produces under `cfg`.
pub fn regularized_layer_count(model: &GanModel, cfg: &DiversityConfig) -> Result<usize> {
    Ok(cfg
        .layers
        .resolve(model.discriminator.num_weight_layers())?
        .len()
        + cfg
            .layers
            .resolve(model.generator.num_weight_layers())?
            .len())
}

pub fn latent_batch(n: usize, dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal))
}

fn probabilities(out: &Array2<f64>) -> Vec<f64> {
    out.column(0).to_vec()
}

fn column(values: Vec<f64>) -> Array2<f64> {
    let n = values.len();
    Array2::from_shape_vec((n, 1), values).expect("one column")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max_cos(net: &Network, cfg: &DiversityConfig) -> Result<Vec<Option<f64>>> {
    cfg.layers
        .resolve(net.num_weight_layers())?
        .into_iter()
        .map(|i| Ok(cosine_stats(&net.kernel_matrix(i)?).map(|s| s.max_offdiag)))
        .collect()
}

fn weight_norms(net: &Network) -> String {
    (0..net.num_weight_layers())
        .map(|i| {
            let w = net.weights(i).expect("index in range");
            format!("{:.4e}", w.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// One discriminator update followed by one generator update.
///
/// The discriminator minimizes `d_loss + λ_D·J_D` and the generator minimizes
/// `g_loss + λ_G·J_G`, each player penalizing its own layers. Spectral
/// normalization and clipping act on the discriminator after its Adam step.
pub fn train_step(
    model: &mut GanModel,
    real_batch: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<MetricsRecord> {
    let n = real_batch.nrows();
    if n == 0 {
        return Err(Error::Usage("empty real batch".into()));
    }
    if real_batch.ncols() != model.discriminator.input_dim() {
        return Err(Error::shape(format!(
            "real batch has {} features, discriminator expects {}",
            real_batch.ncols(),
            model.discriminator.input_dim()
        )));
    }
    let latent_dim = model.latent_dim();
    let div = &cfg.diversity;
    let direal = cfg.regularizer.uses_direal();

    // discriminator
    let z = latent_batch(n, latent_dim, rng);
    let fake = model.generator.forward(&z, Mode::Train)?.into_output();
    let real_pass = model.discriminator.forward(real_batch, Mode::Train)?;
    let fake_pass = model.discriminator.forward(&fake, Mode::Train)?;
    let p_real = probabilities(real_pass.output());
    let p_fake = probabilities(fake_pass.output());
    let d_loss_value = d_loss(&p_real, &p_fake);
    let (grad_real, grad_fake) = d_loss_grads(&p_real, &p_fake);
    model
        .discriminator
        .backward(&real_pass, &column(grad_real))?;
    model
        .discriminator
        .backward(&fake_pass, &column(grad_fake))?;
    if direal {
        apply_diversity(&mut model.discriminator, div, div.lambda_d)?;
    }
    adam_step(&mut model.discriminator, &mut model.d_opt);
    if cfg.regularizer.uses_spectral() {
        model
            .discriminator
            .spectral_normalize_all(cfg.power_iters)?;
    }
    if let Some(c) = cfg.regularizer.clip_bound() {
        model.discriminator.weight_clip(c)?;
    }

    // generator
    let z = latent_batch(n, latent_dim, rng);
    let g_pass = model.generator.forward(&z, Mode::Train)?;
    let d_pass = model.discriminator.forward(g_pass.output(), Mode::Train)?;
    let p_gen = probabilities(d_pass.output());
    let g_loss_value = g_loss(&p_gen, cfg.generator_loss);
    let grad = column(g_loss_grad(&p_gen, cfg.generator_loss));
    let grad_fake_input = model.discriminator.backward(&d_pass, &grad)?;
    model.discriminator.zero_grad();
    model.generator.backward(&g_pass, &grad_fake_input)?;
    if direal {
        apply_diversity(&mut model.generator, div, div.lambda_g)?;
    }
    adam_step(&mut model.generator, &mut model.g_opt);
    model.step += 1;

    let mut max_cos_values = max_cos(&model.discriminator, div)?;
    max_cos_values.extend(max_cos(&model.generator, div)?);
    let record = MetricsRecord {
        step: model.step,
        d_loss: d_loss_value,
        g_loss: g_loss_value,
        j_d: network_diversity(&model.discriminator, div)?,
        j_g: network_diversity(&model.generator, div)?,
        w_div: wasserstein1d(&p_real, &p_fake)?,
        d_real_mean: mean(&p_real),
        d_fake_mean: mean(&p_fake),
        max_cos: max_cos_values,
    };
    if !(record.d_loss.is_finite() && record.g_loss.is_finite()) {
        return Err(Error::NonFinite {
            step: model.step,
            dump: format!(
                "d_loss={} g_loss={} d_real_mean={} d_fake_mean={} |W_D|=[{}] |W_G|=[{}]",
                record.d_loss,
                record.g_loss,
                record.d_real_mean,
                record.d_fake_mean,
                weight_norms(&model.discriminator),
                weight_norms(&model.generator)
            ),
        });
    }
    Ok(record)
}

/// Hooks invoked by [`train`].
pub trait TrainObserver {
    fn on_record(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    /// Called after every step with the updated model.
    fn on_step(&mut self, _model: &GanModel) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<MetricsRecord>,
    pub model: GanModel,
}

/// Seeds for generator init, discriminator init and the training stream, derived from one seed.
pub fn derive_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random(), rng.random())
}

/// Runs `cfg.epochs` shuffled epochs (dropping the final partial batch), or until
/// `max_steps`. Records every `eval_every`-th step.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut model: GanModel,
    observer: &mut (dyn TrainObserver + Send),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("dataset", "dataset is empty"));
    }
    if dataset.item_dim() != model.generator.output_dim() {
        return Err(Error::config(
            "dataset",
            format!(
                "items have {} features, generator emits {}",
                dataset.item_dim(),
                model.generator.output_dim()
            ),
        ));
    }
    if cfg.latent_dim != model.latent_dim() {
        return Err(Error::config(
            "latent_dim",
            format!(
                "config says {}, generator takes {}",
                cfg.latent_dim,
                model.latent_dim()
            ),
        ));
    }
    if dataset.len() < cfg.batch_size {
        return Err(Error::config(
            "batch_size",
            format!(
                "batch of {} exceeds dataset of {}",
                cfg.batch_size,
                dataset.len()
            ),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let (_, stream_seed) = derive_seeds(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let steps_per_epoch = dataset.len() / cfg.batch_size;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    pool.install(|| -> Result<()> {
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for b in 0..steps_per_epoch {
                if cfg.max_steps.is_some_and(|m| model.step >= m) {
                    return Ok(());
                }
                let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
                let batch = dataset.items.select(Axis(0), idx);
                let record = train_step(&mut model, &batch, cfg, &mut rng)?;
                if record.step % cfg.eval_every == 0 {
                    observer.on_record(&record)?;
                    history.push(record);
                }
                observer.on_step(&model)?;
            }
        }
        Ok(())
    })?;
    Ok(TrainOutcome { history, model })
}

/// Builds the model for `cfg` and `dataset` with seeds derived from `cfg.seed`.
pub fn build_model(
    cfg: &TrainConfig,
    dataset: &Dataset,
    arch: super::Architecture,
) -> Result<GanModel> {
    cfg.validate()?;
    let (init_seed, _) = derive_seeds(cfg.seed);
    GanModel::build(
        arch,
        &dataset.item_shape,
        cfg.latent_dim,
        cfg.regularizer,
        cfg.adam()?,
        init_seed,
    )
}

/// `n` generator outputs (eval mode) from latent draws seeded by `seed`.
pub fn sample(generator: &Network, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::Usage("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = latent_batch(n, generator.input_dim(), &mut rng);
    let mut g = generator.clone();
    Ok(g.forward(&z, Mode::Eval)?.into_output())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_ring;
    use crate::gan::Architecture;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            latent_dim: 4,
            ..Default::default()
        }
    }

    const ARCH: Architecture = Architecture::Mlp {
        hidden: 16,
        depth: 2,
    };

    #[test]
    fn two_epochs_of_128_is_four_steps() {
        let cfg = small_cfg();
        let ds = gaussian_ring(8, 2.0, 0.05, 128, 0).unwrap();
        let model = build_model(&cfg, &ds, ARCH).unwrap();
        let out = train(&cfg, &ds, model, &mut ()).unwrap();
        assert_eq!(out.model.step, 4);
        assert_eq!(out.history.len(), 4);
        assert_eq!(
            out.history.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn step_counter_increments_by_one() {
        let cfg = small_cfg();
        let ds = gaussian_ring(8, 2.0, 0.05, 64, 0).unwrap();
        let mut model = build_model(&cfg, &ds, ARCH).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = train_step(&mut model, &ds.items, &cfg, &mut rng).unwrap();
        assert_eq!((r.step, model.step), (1, 1));
        assert!(r.is_finite());
        assert_eq!(
            r.max_cos.len(),
            regularized_layer_count(&model, &cfg.diversity).unwrap()
        );
    }

    #[test]
    fn config_and_dataset_conflicts_are_rejected() {
        let ds = gaussian_ring(8, 2.0, 0.05, 32, 0).unwrap();
        let cfg = small_cfg();
        let model = build_model(&cfg, &ds, ARCH).unwrap();
        assert!(matches!(
            train(&cfg, &ds, model.clone(), &mut ()),
            Err(Error::Config { .. })
        ));
        let bad = TrainConfig {
            lr: 0.0,
            ..small_cfg()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..small_cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn samples_are_reproducible() {
        let cfg = small_cfg();
        let ds = gaussian_ring(8, 2.0, 0.05, 64, 0).unwrap();
        let model = build_model(&cfg, &ds, ARCH).unwrap();
        assert!(sample(&model.generator, 0, 1).is_err());
        let a = sample(&model.generator, 10, 3).unwrap();
        assert_eq!(a, sample(&model.generator, 10, 3).unwrap());
        assert_ne!(a, sample(&model.generator, 10, 4).unwrap());
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            MetricsRecord::csv_header(2),
            "step,d_loss,g_loss,J_D,J_G,w_div,d_real_mean,d_fake_mean,max_cos_l0,max_cos_l1"
        );
        let r = MetricsRecord {
            step: 3,
            d_loss: 1.5,
            g_loss: 0.25,
            j_d: 0.0,
            j_g: 2.0,
            w_div: 0.125,
            d_real_mean: 0.5,
            d_fake_mean: 0.5,
            max_cos: vec![Some(0.75), None],
        };
        assert_eq!(r.csv_row(), "3,1.5,0.25,0,2,0.125,0.5,0.5,0.75,NA");
    }
}
