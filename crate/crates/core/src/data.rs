//! Training datasets: 2-D Gaussian mixtures and IDX grayscale images.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::ModeSpec;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Ring,
    Grid,
    IdxImages,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// One item per row, flattened.
    pub items: Array2<f64>,
    /// `[2]` for points, `[1, h, w]` for images.
    pub item_shape: Vec<usize>,
    pub labels: Option<Vec<u8>>,
    /// Mixture centers for the synthetic sets.
    pub modes: Option<ModeSpec>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.items.nrows() == 0
    }

    pub fn item_dim(&self) -> usize {
        self.items.ncols()
    }
}

fn mixture(
    kind: DatasetKind,
    centers: Vec<[f64; 2]>,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::config("sigma", format!("must be > 0, got {sigma}")));
    }
    if n == 0 {
        return Err(Error::config("n_samples", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma > 0");
    let mut items = Array2::zeros((n, 2));
    for mut row in items.outer_iter_mut() {
        let c = centers[rng.random_range(0..centers.len())];
        row[0] = c[0] + noise.sample(&mut rng);
        row[1] = c[1] + noise.sample(&mut rng);
    }
    Ok(Dataset {
        kind,
        items,
        item_shape: vec![2],
        labels: None,
        modes: Some(ModeSpec::new(centers, sigma)?),
    })
}

pub fn ring_centers(n_modes: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..n_modes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n_modes as f64;
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

/// `n` points from an equal-weight mixture of isotropic Gaussians centered on a circle.
pub fn gaussian_ring(
    n_modes: usize,
    radius: f64,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_modes < 2 {
        return Err(Error::config(
            "ring_modes",
            format!("must be >= 2, got {n_modes}"),
        ));
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::config(
            "ring_radius",
            format!("must be > 0, got {radius}"),
        ));
    }
    mixture(
        DatasetKind::Ring,
        ring_centers(n_modes, radius),
        sigma,
        n,
        seed,
    )
}

pub fn grid_centers(spacing: f64) -> Vec<[f64; 2]> {
    let mut centers = Vec::with_capacity(25);
    for i in 0..5 {
        for j in 0..5 {
            centers.push([(i as f64 - 2.0) * spacing, (j as f64 - 2.0) * spacing]);
        }
    }
    centers
}

/// `n` points from a 5×5 lattice mixture centered at the origin.
pub fn grid25(spacing: f64, sigma: f64, n: usize, seed: u64) -> Result<Dataset> {
    if spacing.is_nan() || spacing <= 0.0 {
        return Err(Error::config(
            "grid_spacing",
            format!("must be > 0, got {spacing}"),
        ));
    }
    mixture(DatasetKind::Grid, grid_centers(spacing), sigma, n, seed)
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    file: &'a str,
}

impl IdxReader<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        let chunk = self.bytes.get(self.offset..end).ok_or_else(|| {
            Error::format(
                self.offset as u64,
                format!("{}: truncated while reading {what}", self.file),
            )
        })?;
        self.offset = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(Error::format(
                0,
                format!(
                    "{}: bad magic {found:#010x}, expected {expected:#010x}",
                    self.file
                ),
            ));
        }
        Ok(())
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.offset as u64,
                format!(
                    "{}: truncated {what}: need {n} bytes from offset {}, file has {}",
                    self.file,
                    self.offset,
                    self.bytes.len()
                ),
            ));
        }
        let out = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(out)
    }
}

/// Parses IDX image bytes (magic `0x00000803`). Pixels map linearly from
/// `[0, 255]` to `[-1, 1]`.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<Dataset> {
    let mut r = IdxReader {
        bytes,
        offset: 0,
        file,
    };
    r.magic(IDX_IMAGES_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    if count == 0 {
        return Err(Error::format(4, format!("{file}: no images")));
    }
    let pixels = r.bytes(count * rows * cols, "pixel data")?;
    let items = Array2::from_shape_fn((count, rows * cols), |(i, p)| {
        pixels[i * rows * cols + p] as f64 / 127.5 - 1.0
    });
    Ok(Dataset {
        kind: DatasetKind::IdxImages,
        items,
        item_shape: vec![1, rows, cols],
        labels: None,
        modes: None,
    })
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    let mut r = IdxReader {
        bytes,
        offset: 0,
        file,
    };
    r.magic(IDX_LABELS_MAGIC)?;
    let count = r.u32("label count")? as usize;
    Ok(r.bytes(count, "labels")?.to_vec())
}

/// Loads an IDX image file and, optionally, its label file.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let name = images.display().to_string();
    let mut ds = parse_idx_images(&fs::read(images)?, &name)?;
    if let Some(path) = labels {
        let lname = path.display().to_string();
        let labels = parse_idx_labels(&fs::read(path)?, &lname)?;
        if labels.len() != ds.len() {
            return Err(Error::format(
                4,
                format!("{lname}: {} labels for {} images", labels.len(), ds.len()),
            ));
        }
        ds.labels = Some(labels);
    }
    Ok(ds)
}
