//! Central finite-difference checks for the diversity gradients and for whole
//! networks trained on the combined adversarial + diversity objective.
//!
//! Masks are frozen at the evaluation point: perturbed losses reuse the mask
//! computed from the unperturbed weights.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diversity::{
    apply_diversity, diversity_grad_exact, diversity_grad_paper, diversity_grad_with_mask,
    diversity_loss_with_mask, gram, mask, BinaryMask, DiversityConfig, LayerSelection, Variant,
};
use crate::error::Result;
use crate::gan::{d_loss, d_loss_grads, g_loss, g_loss_grad, latent_batch, GeneratorLoss};
use crate::kernel::KernelMatrix;
use crate::nn::{Activation, FeatureShape, LayerSpec, Mode, Network};

pub const DIVERSITY_THRESHOLD: f64 = 1e-5;
pub const IDENTITY_THRESHOLD: f64 = 1e-12;
pub const MODEL_THRESHOLD: f64 = 1e-4;
/// Minimum distance of every off-diagonal |Ω| from τ for a diversity instance.
pub const MASK_MARGIN: f64 = 1e-3;
pub const TAUS: [f64; 4] = [0.0, 0.3, 0.5, 0.8];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    /// Largest error observed (relative, or absolute for the identity check).
    pub max_error: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.threshold
    }
}

/// Largest elementwise `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// True when every off-diagonal |Ω| sits at least `MASK_MARGIN` away from `tau`.
pub fn clear_of_mask_boundary(km: &KernelMatrix, variant: Variant, tau: f64) -> bool {
    let omega = gram(km, variant);
    let n = omega.dim();
    (0..n)
        .all(|i| (0..n).all(|j| i == j || (omega.values()[[i, j]].abs() - tau).abs() > MASK_MARGIN))
}

/// Draws a random kernel matrix satisfying the mask margin.
pub fn draw_instance(rng: &mut impl Rng, variant: Variant, tau: f64) -> KernelMatrix {
    loop {
        let m = rng.random_range(3..=8);
        let n = rng.random_range(2..=6);
        let km = KernelMatrix::from_columns(gaussian_matrix(m, n, rng)).expect("non-empty");
        if clear_of_mask_boundary(&km, variant, tau) {
            return km;
        }
    }
}

/// Central differences of the frozen-mask diversity loss with respect to every entry.
pub fn diversity_fd(km: &KernelMatrix, variant: Variant, m: &BinaryMask, h: f64) -> Array2<f64> {
    let base = km.values();
    Array2::from_shape_fn(base.raw_dim(), |(r, c)| {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[[r, c]] += h;
        minus[[r, c]] -= h;
        let lp = diversity_loss_with_mask(
            &KernelMatrix::from_columns(plus).expect("non-empty"),
            variant,
            m,
        );
        let lm = diversity_loss_with_mask(
            &KernelMatrix::from_columns(minus).expect("non-empty"),
            variant,
            m,
        );
        (lp - lm) / (2.0 * h)
    })
}

/// Exact diversity gradient vs. finite differences over `instances` random draws,
/// cycling through [`TAUS`] and both variants.
pub fn diversity_suite(instances: usize, seed: u64, corrupt: bool) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let tau = TAUS[k % TAUS.len()];
        let variant = if (k / TAUS.len()).is_multiple_of(2) {
            Variant::Raw
        } else {
            Variant::Cosine
        };
        let km = draw_instance(&mut rng, variant, tau);
        let m = mask(&gram(&km, variant), tau);
        let mut analytic = diversity_grad_with_mask(&km, variant, &m);
        if corrupt && k == 0 {
            analytic[[0, 0]] += 1e-2 * (1.0 + analytic[[0, 0]].abs());
        }
        let numeric = diversity_fd(&km, variant, &m, 1e-6);
        let err = relative_error(
            analytic.as_slice().expect("standard layout"),
            numeric.as_slice().expect("standard layout"),
            1e-8,
        );
        worst = worst.max(err);
    }
    CheckReport {
        name: "diversity gradient vs finite differences".into(),
        cases: instances,
        max_error: worst,
        threshold: DIVERSITY_THRESHOLD,
        detail: format!("tau in {TAUS:?}, raw and cosine, step 1e-6"),
    }
}

/// Published update direction vs. half the exact gradient (raw variant).
pub fn paper_identity_suite(instances: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let (mut ratio_lo, mut ratio_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..instances {
        let tau = TAUS[k % TAUS.len()];
        let km = KernelMatrix::from_columns(gaussian_matrix(
            rng.random_range(2..=8),
            rng.random_range(2..=6),
            &mut rng,
        ))
        .expect("non-empty");
        let cfg = DiversityConfig::with_tau(tau, Variant::Raw);
        let paper = diversity_grad_paper(&km, &cfg);
        let exact = diversity_grad_exact(&km, &cfg);
        for (p, e) in paper.iter().zip(exact.iter()) {
            worst = worst.max((p - 0.5 * e).abs());
            if e.abs() > 1e-9 {
                ratio_lo = ratio_lo.min(p / e);
                ratio_hi = ratio_hi.max(p / e);
            }
        }
    }
    CheckReport {
        name: "published gradient == 0.5 x exact (raw)".into(),
        cases: instances,
        max_error: worst,
        threshold: IDENTITY_THRESHOLD,
        detail: format!("published/exact ratio in [{ratio_lo:.15}, {ratio_hi:.15}]"),
    }
}

/// Frozen masks for every selected layer of `net`.
fn frozen_masks(net: &Network, cfg: &DiversityConfig) -> Result<Vec<(usize, BinaryMask)>> {
    cfg.layers
        .resolve(net.num_weight_layers())?
        .into_iter()
        .map(|i| {
            let km = net.kernel_matrix(i)?;
            Ok((i, mask(&gram(&km, cfg.variant), cfg.tau)))
        })
        .collect()
}

fn frozen_penalty(net: &Network, variant: Variant, masks: &[(usize, BinaryMask)]) -> f64 {
    masks
        .iter()
        .map(|(i, m)| {
            diversity_loss_with_mask(&net.kernel_matrix(*i).expect("selected layer"), variant, m)
        })
        .sum()
}

/// Compares every stored parameter gradient of `net` against central differences
/// of `objective`, which must evaluate the same scalar the gradients came from.
fn compare_all_params(
    net: &Network,
    objective: &mut dyn FnMut(&Network) -> f64,
    h: f64,
    floor: f64,
    corrupt: bool,
) -> (f64, usize) {
    let mut probe = net.clone();
    let analytic: Vec<Vec<f64>> = probe.params_mut().iter().map(|p| p.grad.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (t, grads) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(grads.len());
        for k in 0..grads.len() {
            let mut plus = net.clone();
            plus.params_mut()[t].value[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[t].value[k] -= h;
            numeric.push((objective(&plus) - objective(&minus)) / (2.0 * h));
        }
        let mut grads = grads.clone();
        if corrupt && t == 0 {
            grads[0] += 1e-2 * (1.0 + grads[0].abs());
        }
        worst = worst.max(relative_error(&grads, &numeric, floor));
        count += grads.len();
    }
    (worst, count)
}

fn probs(net: &Network, x: &Array2<f64>) -> Vec<f64> {
    let mut n = net.clone();
    n.forward(x, Mode::Train)
        .expect("shape checked")
        .output()
        .column(0)
        .to_vec()
}

/// Discriminator objective `d_loss + λ_D·J_D` on a `2-16-16-1` network.
pub fn discriminator_suite(cfg: &DiversityConfig, seed: u64, corrupt: bool) -> Result<CheckReport> {
    let specs = [
        LayerSpec::Dense { units: 16 },
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Dense { units: 16 },
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Dense { units: 1 },
        LayerSpec::Activation(Activation::Sigmoid),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(FeatureShape::flat(2), &specs, seed)?;
    // larger weights than the DCGAN init so the adversarial term is not negligible
    for i in 0..net.num_weight_layers() {
        net.weights_mut(i)?
            .mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) * 0.5);
    }
    let real = gaussian_matrix(8, 2, &mut rng);
    let fake = gaussian_matrix(8, 2, &mut rng) * 0.5;
    combined_discriminator_check(
        net,
        &real,
        &fake,
        cfg,
        corrupt,
        "discriminator 2-16-16-1: d_loss + lambda_D J_D",
    )
}

/// Convolutional discriminator with batch normalization on `1×8×8` inputs.
pub fn conv_discriminator_suite(
    cfg: &DiversityConfig,
    seed: u64,
    corrupt: bool,
) -> Result<CheckReport> {
    let specs = [
        LayerSpec::Conv {
            channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Conv {
            channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        LayerSpec::BatchNorm,
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Dense { units: 1 },
        LayerSpec::Activation(Activation::Sigmoid),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(FeatureShape::image(1, 8, 8), &specs, seed)?;
    for i in 0..net.num_weight_layers() {
        net.weights_mut(i)?
            .mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) * 0.3);
    }
    let real = gaussian_matrix(4, 64, &mut rng);
    let fake = gaussian_matrix(4, 64, &mut rng) * 0.5;
    combined_discriminator_check(
        net,
        &real,
        &fake,
        cfg,
        corrupt,
        "conv discriminator 1x8x8 + batchnorm",
    )
}

fn combined_discriminator_check(
    mut net: Network,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    cfg: &DiversityConfig,
    corrupt: bool,
    name: &str,
) -> Result<CheckReport> {
    let masks = frozen_masks(&net, cfg)?;
    let real_pass = net.forward(real, Mode::Train)?;
    let fake_pass = net.forward(fake, Mode::Train)?;
    let pr = real_pass.output().column(0).to_vec();
    let pf = fake_pass.output().column(0).to_vec();
    let (gr, gf) = d_loss_grads(&pr, &pf);
    net.backward(
        &real_pass,
        &Array2::from_shape_vec((gr.len(), 1), gr).expect("column"),
    )?;
    net.backward(
        &fake_pass,
        &Array2::from_shape_vec((gf.len(), 1), gf).expect("column"),
    )?;
    apply_diversity(&mut net, cfg, cfg.lambda_d)?;

    let lambda = cfg.lambda_d;
    let variant = cfg.variant;
    let mut objective = |n: &Network| {
        d_loss(&probs(n, real), &probs(n, fake)) + lambda * frozen_penalty(n, variant, &masks)
    };
    let (worst, count) = compare_all_params(&net, &mut objective, 1e-5, 1e-6, corrupt);
    Ok(CheckReport {
        name: name.into(),
        cases: count,
        max_error: worst,
        threshold: MODEL_THRESHOLD,
        detail: format!("lambda_D={lambda}, tau={}, {variant}", cfg.tau),
    })
}

/// Generator objective `g_loss + λ_G·J_G`, backpropagated through a fixed discriminator.
pub fn generator_suite(cfg: &DiversityConfig, seed: u64, corrupt: bool) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_specs = [
        LayerSpec::Dense { units: 12 },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Dense { units: 12 },
        LayerSpec::Activation(Activation::Tanh),
        LayerSpec::Dense { units: 2 },
    ];
    let d_specs = [
        LayerSpec::Dense { units: 10 },
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Dense { units: 1 },
        LayerSpec::Activation(Activation::Sigmoid),
    ];
    let mut gen = Network::init(FeatureShape::flat(3), &g_specs, seed)?;
    let mut disc = Network::init(FeatureShape::flat(2), &d_specs, seed + 1)?;
    for net in [&mut gen, &mut disc] {
        for i in 0..net.num_weight_layers() {
            net.weights_mut(i)?
                .mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) * 0.5);
        }
    }
    let z = latent_batch(6, 3, &mut rng);
    let masks = frozen_masks(&gen, cfg)?;
    let mode = GeneratorLoss::NonSaturating;

    let g_pass = gen.forward(&z, Mode::Train)?;
    let d_pass = disc.forward(g_pass.output(), Mode::Train)?;
    let p = d_pass.output().column(0).to_vec();
    let grad = g_loss_grad(&p, mode);
    let dx = disc.backward(
        &d_pass,
        &Array2::from_shape_vec((grad.len(), 1), grad).expect("column"),
    )?;
    gen.backward(&g_pass, &dx)?;
    apply_diversity(&mut gen, cfg, cfg.lambda_g)?;

    let lambda = cfg.lambda_g;
    let variant = cfg.variant;
    let mut objective = |g: &Network| {
        let mut g = g.clone();
        let fake = g.forward(&z, Mode::Train).expect("shape").into_output();
        g_loss(&probs(&disc, &fake), mode) + lambda * frozen_penalty(&g, variant, &masks)
    };
    let (worst, count) = compare_all_params(&gen, &mut objective, 1e-5, 1e-6, corrupt);
    Ok(CheckReport {
        name: "generator 3-12-12-2 through discriminator: g_loss + lambda_G J_G".into(),
        cases: count,
        max_error: worst,
        threshold: MODEL_THRESHOLD,
        detail: format!("lambda_G={lambda}, tau={}, {variant}", cfg.tau),
    })
}

/// Every suite the `gradcheck` command runs. Model checks penalize all weight
/// layers with `λ = 1` so the diversity term is exercised at full strength.
pub fn run_all(cfg: &DiversityConfig, seed: u64, corrupt: bool) -> Result<Vec<CheckReport>> {
    let model_cfg = DiversityConfig {
        lambda_d: 1.0,
        lambda_g: 1.0,
        layers: LayerSelection::All,
        ..cfg.clone()
    };
    Ok(vec![
        diversity_suite(100, seed, corrupt),
        paper_identity_suite(50, seed.wrapping_add(1)),
        discriminator_suite(&model_cfg, seed.wrapping_add(2), corrupt)?,
        conv_discriminator_suite(&model_cfg, seed.wrapping_add(3), corrupt)?,
        generator_suite(&model_cfg, seed.wrapping_add(4), corrupt)?,
    ])
}
