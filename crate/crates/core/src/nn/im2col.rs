//! Patch-matrix expansion shared by convolution and transposed convolution.
//!
//! `image` is one sample laid out `(channels, height, width)`. The patch grid has
//! `grid_h × grid_w` positions; position `(gy, gx)` reads the window whose top-left
//! corner sits at `(gy·stride − pad, gx·stride − pad)`. Out-of-bounds taps are zero.
//! Rows of the patch matrix are ordered (channel, kernel-row, kernel-col).

use ndarray::{Array2, ArrayView2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PatchGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PatchGrid {
    #[inline]
    fn tap(&self, g: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (g * self.stride + k) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < limit {
            Some(pos as usize)
        } else {
            None
        }
    }
}

pub(crate) fn im2col(image: &[f64], g: &PatchGrid) -> Array2<f64> {
    debug_assert_eq!(image.len(), g.channels * g.height * g.width);
    let k = g.kernel;
    let cols = g.grid_h * g.grid_w;
    let mut out = Array2::zeros((g.channels * k * k, cols));
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kr in 0..k {
            for kc in 0..k {
                let row = (c * k + kr) * k + kc;
                let mut dst = out.row_mut(row);
                for gy in 0..g.grid_h {
                    let Some(y) = g.tap(gy, kr, g.height) else {
                        continue;
                    };
                    for gx in 0..g.grid_w {
                        if let Some(x) = g.tap(gx, kc, g.width) {
                            dst[gy * g.grid_w + gx] = plane[y * g.width + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch rows back, summing overlapping taps.
pub(crate) fn col2im(cols: ArrayView2<f64>, g: &PatchGrid) -> Vec<f64> {
    let k = g.kernel;
    let mut image = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kr in 0..k {
            for kc in 0..k {
                let src = cols.row((c * k + kr) * k + kc);
                for gy in 0..g.grid_h {
                    let Some(y) = g.tap(gy, kr, g.height) else {
                        continue;
                    };
                    for gx in 0..g.grid_w {
                        if let Some(x) = g.tap(gx, kc, g.width) {
                            plane[y * g.width + x] += src[gy * g.grid_w + gx];
                        }
                    }
                }
            }
        }
    }
    image
}
