//! Adversarial losses on discriminator probabilities.
//!
//! Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before taking logs.
//! Gradients are the derivatives of the log terms evaluated at the clamped value.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeneratorLoss {
    /// `mean(log(1 − D(G(z))))`, minimized.
    Saturating,
    /// `−mean(log D(G(z)))`.
    #[default]
    NonSaturating,
}

impl FromStr for GeneratorLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saturating" => Ok(GeneratorLoss::Saturating),
            "non_saturating" => Ok(GeneratorLoss::NonSaturating),
            other => Err(Error::config(
                "generator_loss",
                format!("expected saturating|non_saturating, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for GeneratorLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorLoss::Saturating => "saturating",
            GeneratorLoss::NonSaturating => "non_saturating",
        })
    }
}

/// Discriminator cross-entropy `−mean(log D(x)) − mean(log(1 − D(G(z))))`.
pub fn d_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    -mean(d_real.iter().map(|&p| clamp(p).ln()))
        - mean(d_fake.iter().map(|&p| (1.0 - clamp(p)).ln()))
}

/// Gradients of [`d_loss`] with respect to each real and fake probability.
pub fn d_loss_grads(d_real: &[f64], d_fake: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    (
        d_real.iter().map(|&p| -1.0 / (nr * clamp(p))).collect(),
        d_fake
            .iter()
            .map(|&p| 1.0 / (nf * (1.0 - clamp(p))))
            .collect(),
    )
}

pub fn g_loss(d_fake: &[f64], mode: GeneratorLoss) -> f64 {
    match mode {
        GeneratorLoss::Saturating => mean(d_fake.iter().map(|&p| (1.0 - clamp(p)).ln())),
        GeneratorLoss::NonSaturating => -mean(d_fake.iter().map(|&p| clamp(p).ln())),
    }
}

pub fn g_loss_grad(d_fake: &[f64], mode: GeneratorLoss) -> Vec<f64> {
    let n = d_fake.len() as f64;
    d_fake
        .iter()
        .map(|&p| match mode {
            GeneratorLoss::Saturating => -1.0 / (n * (1.0 - clamp(p))),
            GeneratorLoss::NonSaturating => -1.0 / (n * clamp(p)),
        })
        .collect()
}
