//! Masked Gram-matrix diversity penalty.
//!
//! For a kernel matrix `Θ` (one filter per column) the penalty is
//! `J = ½ Σᵢⱼ Ωᵢⱼ² Mᵢⱼ` with `Ω = ΘᵀΘ` and `Mᵢⱼ = 1` iff `i ≠ j` and `|Ωᵢⱼ| ≥ τ`.
//! Both ordered pairs `(i, j)` and `(j, i)` contribute. The `Cosine` variant
//! builds `Ω` from unit-normalized columns, `Raw` from the weights as stored.
//!
//! The mask is piecewise constant in `Θ` and is held fixed when differentiating.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{fold, normalize_columns, KernelMatrix};
use crate::nn::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    Raw,
    #[default]
    Cosine,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Variant::Raw),
            "cosine" => Ok(Variant::Cosine),
            other => Err(Error::config(
                "variant",
                format!("expected raw|cosine, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Raw => "raw",
            Variant::Cosine => "cosine",
        })
    }
}

/// Which weight-bearing layers of a network are penalized.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerSelection {
    /// Every weight layer except the network's last one.
    #[default]
    AllButOutput,
    All,
    /// Explicit weight-layer indices (0-based, counting weight layers only).
    Indices(BTreeSet<usize>),
}

impl LayerSelection {
    pub fn resolve(&self, num_weight_layers: usize) -> Result<Vec<usize>> {
        match self {
            LayerSelection::AllButOutput => Ok((0..num_weight_layers.saturating_sub(1)).collect()),
            LayerSelection::All => Ok((0..num_weight_layers).collect()),
            LayerSelection::Indices(set) => {
                if let Some(&bad) = set.iter().find(|&&i| i >= num_weight_layers) {
                    return Err(Error::config(
                        "layers",
                        format!(
                            "layer index {bad} out of range ({num_weight_layers} weight layers)"
                        ),
                    ));
                }
                Ok(set.iter().copied().collect())
            }
        }
    }
}

impl FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all_but_output" => Ok(LayerSelection::AllButOutput),
            "all" => Ok(LayerSelection::All),
            list => list
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::config("layers", format!("bad layer index `{t}`")))
                })
                .collect::<Result<BTreeSet<_>>>()
                .map(LayerSelection::Indices),
        }
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelection::AllButOutput => f.write_str("all_but_output"),
            LayerSelection::All => f.write_str("all"),
            LayerSelection::Indices(set) => {
                let parts: Vec<String> = set.iter().map(|i| i.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityConfig {
    pub tau: f64,
    pub lambda_g: f64,
    pub lambda_d: f64,
    pub variant: Variant,
    pub layers: LayerSelection,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            tau: 0.5,
            lambda_g: 0.01,
            lambda_d: 1.0,
            variant: Variant::Cosine,
            layers: LayerSelection::AllButOutput,
        }
    }
}

impl DiversityConfig {
    pub fn with_tau(tau: f64, variant: Variant) -> Self {
        DiversityConfig {
            tau,
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(
                "tau",
                format!("must be in [0, 1], got {}", self.tau),
            ));
        }
        for (key, v) in [("lambda_g", self.lambda_g), ("lambda_d", self.lambda_d)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    key,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Symmetric matrix of pairwise column inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(Array2<f64>);

impl GramMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// 0/1 selection of penalized pairs. Zero diagonal, symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Array2<f64>);

impl BinaryMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.0[[i, j]] != 0.0
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }
}

/// The column matrix the penalty acts on: raw for `Raw`, normalized for `Cosine`.
fn working_columns(km: &KernelMatrix, variant: Variant) -> Array2<f64> {
    match variant {
        Variant::Raw => km.values().clone(),
        Variant::Cosine => normalize_columns(km).into_values(),
    }
}

fn symmetric_gram(cols: &Array2<f64>) -> Array2<f64> {
    let g = cols.t().dot(cols);
    (&g + &g.t()) * 0.5
}

pub fn gram(km: &KernelMatrix, variant: Variant) -> GramMatrix {
    GramMatrix(symmetric_gram(&working_columns(km, variant)))
}

pub fn mask(omega: &GramMatrix, tau: f64) -> BinaryMask {
    let n = omega.dim();
    BinaryMask(Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && omega.0[[i, j]].abs() >= tau {
            1.0
        } else {
            0.0
        }
    }))
}

fn masked_loss(omega: &Array2<f64>, m: &BinaryMask) -> f64 {
    0.5 * Zip::from(omega)
        .and(&m.0)
        .fold(0.0, |acc, &o, &mk| acc + o * o * mk)
}

/// Single-layer penalty `½ Σ Ω² ∘ M`.
pub fn diversity_loss(km: &KernelMatrix, cfg: &DiversityConfig) -> f64 {
    let omega = gram(km, cfg.variant);
    let m = mask(&omega, cfg.tau);
    masked_loss(&omega.0, &m)
}

/// Penalty evaluated with an externally supplied mask (e.g. frozen at another point).
pub fn diversity_loss_with_mask(km: &KernelMatrix, variant: Variant, m: &BinaryMask) -> f64 {
    masked_loss(gram(km, variant).values(), m)
}

/// The published update direction `Θ (Ω ∘ M)`, computed on the variant's
/// column matrix. It is half the exact gradient for `Raw` and ignores the
/// normalization Jacobian for `Cosine`.
pub fn diversity_grad_paper(km: &KernelMatrix, cfg: &DiversityConfig) -> Array2<f64> {
    let cols = working_columns(km, cfg.variant);
    let omega = symmetric_gram(&cols);
    let m = mask(&GramMatrix(omega.clone()), cfg.tau);
    cols.dot(&(&omega * &m.0))
}

/// Exact gradient of [`diversity_loss`] with respect to the raw columns, mask held fixed.
pub fn diversity_grad_exact(km: &KernelMatrix, cfg: &DiversityConfig) -> Array2<f64> {
    let omega = gram(km, cfg.variant);
    let m = mask(&omega, cfg.tau);
    diversity_grad_with_mask(km, cfg.variant, &m)
}

/// Exact gradient of [`diversity_loss_with_mask`].
pub fn diversity_grad_with_mask(
    km: &KernelMatrix,
    variant: Variant,
    m: &BinaryMask,
) -> Array2<f64> {
    let cols = working_columns(km, variant);
    let omega = symmetric_gram(&cols);
    let mut grad = cols.dot(&(&omega * &m.0)) * 2.0;
    if variant == Variant::Cosine {
        // chain through θ̂ = θ/‖θ‖: g = (I − θ̂θ̂ᵀ) ĝ / ‖θ‖
        for (j, (mut g, unit)) in grad
            .axis_iter_mut(Axis(1))
            .zip(cols.axis_iter(Axis(1)))
            .enumerate()
        {
            if km.is_degenerate(j) {
                g.fill(0.0);
                continue;
            }
            let norm = km.column_norms()[j];
            let radial = unit.dot(&g);
            Zip::from(&mut g)
                .and(&unit)
                .for_each(|gv, &u| *gv = (*gv - radial * u) / norm);
        }
    }
    grad
}

/// Adds `lambda ×` the exact diversity gradient of every selected layer of `net`
/// to that layer's weight-gradient buffer and returns the unweighted total
/// penalty `Σₗ J⁽ˡ⁾`. With `lambda == 0` the buffers are left untouched.
///
/// Per-layer work runs on the current rayon pool; accumulation order is fixed,
/// so results do not depend on the thread count.
pub fn apply_diversity(net: &mut Network, cfg: &DiversityConfig, lambda: f64) -> Result<f64> {
    let selected = cfg.layers.resolve(net.num_weight_layers())?;
    let kernels: Vec<KernelMatrix> = selected
        .iter()
        .map(|&i| net.kernel_matrix(i))
        .collect::<Result<_>>()?;
    let per_layer: Vec<(f64, Array2<f64>)> = kernels
        .par_iter()
        .map(|km| {
            let omega = gram(km, cfg.variant);
            let m = mask(&omega, cfg.tau);
            let loss = masked_loss(omega.values(), &m);
            (loss, diversity_grad_with_mask(km, cfg.variant, &m))
        })
        .collect();

    let mut total = 0.0;
    for (&index, (loss, grad)) in selected.iter().zip(per_layer) {
        total += loss;
        if lambda != 0.0 {
            let shape = net.weight_shape(index)?;
            let g = fold(grad.view(), shape)?;
            let mut buf = net.weight_grad_mut(index)?;
            Zip::from(&mut buf)
                .and(&g)
                .for_each(|b, &d| *b += lambda * d);
        }
    }
    Ok(total)
}

/// Unweighted penalty over the selected layers, without touching gradients.
pub fn network_diversity(net: &Network, cfg: &DiversityConfig) -> Result<f64> {
    cfg.layers
        .resolve(net.num_weight_layers())?
        .into_iter()
        .map(|i| net.kernel_matrix(i).map(|km| diversity_loss(&km, cfg)))
        .sum()
}
