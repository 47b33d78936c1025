//! Collapse, divergence and filter-redundancy diagnostics.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::diversity::{gram, Variant};
use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

/// Pooled discriminator outputs, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample(Vec<f64>);

impl ScoreSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("score sample is empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Usage(format!("score {bad} outside [0, 1]")));
        }
        Ok(ScoreSample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// W₁ between two pooled score distributions.
    pub fn divergence(&self, other: &ScoreSample) -> f64 {
        wasserstein1d(&self.0, &other.0).expect("score samples are non-empty")
    }
}

/// Exact 1-D Wasserstein-1 distance between two empirical distributions with
/// uniform weights: `∫₀¹ |F_a⁻¹(t) − F_b⁻¹(t)| dt`.
pub fn wasserstein1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("wasserstein1d needs non-empty inputs".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(sum / a.len() as f64);
    }
    // Walk the merged quantile breakpoints i/n and j/m using integer arithmetic
    // on the common denominator n·m so the segment lengths are exact.
    let (n, m) = (a.len() as u64, b.len() as u64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0u64;
    let total = n * m;
    let mut acc = 0.0;
    while t < total {
        let next_a = (i as u64 + 1) * m;
        let next_b = (j as u64 + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - t) as f64 * (a[i] - b[j]).abs();
        t = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

/// Centers of a 2-D mixture and their common standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    centers: Vec<[f64; 2]>,
    sigma: f64,
}

impl ModeSpec {
    pub fn new(centers: Vec<[f64; 2]>, sigma: f64) -> Result<Self> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::Usage(format!("mode sigma must be > 0, got {sigma}")));
        }
        if centers.is_empty() {
            return Err(Error::Usage("mode spec needs at least one center".into()));
        }
        for (i, c) in centers.iter().enumerate() {
            if centers[..i].contains(c) {
                return Err(Error::Usage(format!("duplicate center {c:?}")));
            }
        }
        Ok(ModeSpec { centers, sigma })
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub covered: usize,
    pub hq_fraction: f64,
}

/// A sample is high quality when it lies within 3σ of its nearest center. A center
/// is covered when it owns at least `max(1, 0.01·N)` high-quality samples.
pub fn mode_coverage(samples: ArrayView2<f64>, modes: &ModeSpec) -> Result<Coverage> {
    if samples.nrows() == 0 {
        return Err(Error::Usage("mode_coverage needs samples".into()));
    }
    if samples.ncols() != 2 {
        return Err(Error::shape(format!(
            "mode_coverage needs 2-D points, got {} columns",
            samples.ncols()
        )));
    }
    let radius = 3.0 * modes.sigma;
    let mut owned = vec![0usize; modes.centers.len()];
    let mut hq = 0usize;
    for p in samples.outer_iter() {
        let (nearest, dist) = modes
            .centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty centers");
        if dist <= radius {
            owned[nearest] += 1;
            hq += 1;
        }
    }
    let n = samples.nrows();
    let threshold = (0.01 * n as f64).max(1.0);
    Ok(Coverage {
        covered: owned.iter().filter(|&&c| c as f64 >= threshold).count(),
        hq_fraction: hq as f64 / n as f64,
    })
}

pub const COSINE_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineStats {
    pub max_offdiag: f64,
    pub mean_abs: f64,
    /// Counts of off-diagonal cosines (both orderings) in 20 equal bins over `[-1, 1]`.
    pub histogram: [u64; COSINE_BINS],
}

/// Pairwise cosine statistics of a layer's filters. `None` for single-filter layers.
pub fn cosine_stats(km: &KernelMatrix) -> Option<CosineStats> {
    let n = km.cols();
    if n < 2 {
        return None;
    }
    let omega = gram(km, Variant::Cosine);
    let mut max_offdiag = 0.0f64;
    let mut sum_abs = 0.0;
    let mut histogram = [0u64; COSINE_BINS];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = omega.values()[[i, j]].clamp(-1.0, 1.0);
            max_offdiag = max_offdiag.max(c.abs());
            sum_abs += c.abs();
            let bin = (((c + 1.0) / 2.0) * COSINE_BINS as f64) as usize;
            histogram[bin.min(COSINE_BINS - 1)] += 1;
        }
    }
    Some(CosineStats {
        max_offdiag,
        mean_abs: sum_abs / (n * (n - 1)) as f64,
        histogram,
    })
}
