//! Spectral normalization by power iteration on the unrolled weight matrix.

use ndarray::{Array1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::network::Network;
use crate::error::{Error, Result};

/// Deterministic starting vector for the left singular vector estimate.
pub fn initial_u(rows: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Array1<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = u.dot(&u).sqrt();
    u / norm
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

/// Runs `iters` rounds of `v ← Wᵀu/‖Wᵀu‖, u ← Wv/‖Wv‖` starting from `u`, updating
/// `u` in place, and returns the estimate `σ₁ ≈ uᵀWv`.
pub fn power_iteration(matrix: ArrayView2<f64>, u: &mut Array1<f64>, iters: usize) -> f64 {
    assert_eq!(u.len(), matrix.nrows(), "u must have one entry per row");
    let mut v = Array1::zeros(matrix.ncols());
    for _ in 0..iters {
        v = normalized(matrix.t().dot(u));
        *u = normalized(matrix.dot(&v));
    }
    u.dot(&matrix.dot(&v))
}

impl Network {
    /// Divides weight layer `index` by its leading singular value, estimated with
    /// `power_iters` power-iteration rounds. The `u` vector persists on the layer
    /// so later calls warm-start. Returns the σ₁ estimate used.
    pub fn spectral_normalize(&mut self, index: usize, power_iters: usize) -> Result<f64> {
        if power_iters == 0 {
            return Err(Error::config("power_iters", "must be >= 1"));
        }
        let km = self.kernel_matrix(index)?;
        let rows = km.rows();
        let layer = self.weight_layer_mut(index)?;
        let slot = layer.spectral_u_mut().expect("weighted layer");
        let mut u = match slot.take() {
            Some(u) if u.len() == rows => u,
            _ => initial_u(rows, 0x5eed_0000 + index as u64),
        };
        let sigma = power_iteration(km.values().view(), &mut u, power_iters);
        *slot = Some(u);
        if sigma > 0.0 {
            layer
                .weight_view_mut()
                .expect("weighted layer")
                .mapv_inplace(|w| w / sigma);
        }
        self.touch();
        Ok(sigma)
    }

    /// Spectrally normalizes every weight-bearing layer.
    pub fn spectral_normalize_all(&mut self, power_iters: usize) -> Result<()> {
        for i in 0..self.num_weight_layers() {
            self.spectral_normalize(i, power_iters)?;
        }
        Ok(())
    }
}
