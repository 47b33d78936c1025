//! Kernel-matrix view of layer weights.
//!
//! Every weight-bearing layer is viewed as an `m × n` matrix with one column per
//! output filter. Dense weights are stored `fan_in × fan_out` and are already in
//! this form. Convolution weights are stored `(out, in, k, k)`; column `j` is the
//! filter producing output channel `j`, flattened in (input-channel, kernel-row,
//! kernel-col) order, so `m = k² · in_channels`.
//!
//! Bias vectors never enter the kernel matrix.

use ndarray::{Array1, Array2, ArrayD, ArrayView2, ArrayViewD, Axis, Ix4, IxDyn};

use crate::error::{Error, Result};

/// Columns with Euclidean norm at or below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Geometry of a weight-bearing layer as far as the kernel matrix is concerned.
///
/// Transposed convolutions use the `Conv` shape too: their weights are stored
/// in the same `(out, in, k, k)` layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
}

impl LayerShape {
    pub fn dense(fan_in: usize, fan_out: usize) -> Result<Self> {
        let shape = LayerShape::Dense { fan_in, fan_out };
        shape.validate()?;
        Ok(shape)
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        let shape = LayerShape::Conv {
            in_channels,
            out_channels,
            kernel,
        };
        shape.validate()?;
        Ok(shape)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerShape::Dense { fan_in, fan_out } => fan_in >= 1 && fan_out >= 1,
            LayerShape::Conv {
                in_channels,
                out_channels,
                kernel,
            } => in_channels >= 1 && out_channels >= 1 && kernel >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("{self:?}: all counts must be >= 1")))
        }
    }

    /// Rows `m` of the kernel matrix.
    pub fn rows(&self) -> usize {
        match *self {
            LayerShape::Dense { fan_in, .. } => fan_in,
            LayerShape::Conv {
                in_channels,
                kernel,
                ..
            } => kernel * kernel * in_channels,
        }
    }

    /// Columns `n` of the kernel matrix (output filters).
    pub fn cols(&self) -> usize {
        match *self {
            LayerShape::Dense { fan_out, .. } => fan_out,
            LayerShape::Conv { out_channels, .. } => out_channels,
        }
    }

    /// Dimensions of the stored weight tensor.
    pub fn tensor_dims(&self) -> Vec<usize> {
        match *self {
            LayerShape::Dense { fan_in, fan_out } => vec![fan_in, fan_out],
            LayerShape::Conv {
                in_channels,
                out_channels,
                kernel,
            } => vec![out_channels, in_channels, kernel, kernel],
        }
    }
}

/// A layer's filters as the columns of an `m × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: Array2<f64>,
    column_norms: Array1<f64>,
}

impl KernelMatrix {
    /// Wraps a matrix whose columns are raw filters.
    pub fn from_columns(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::shape(format!(
                "kernel matrix must be non-empty, got {:?}",
                values.dim()
            )));
        }
        let column_norms = column_norms(values.view());
        Ok(KernelMatrix {
            values,
            column_norms,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Euclidean norms of the raw (pre-normalization) columns.
    pub fn column_norms(&self) -> &Array1<f64> {
        &self.column_norms
    }

    pub fn is_degenerate(&self, col: usize) -> bool {
        self.column_norms[col] <= DEGENERATE_NORM
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

fn column_norms(values: ArrayView2<f64>) -> Array1<f64> {
    values
        .axis_iter(Axis(1))
        .map(|c| c.dot(&c).sqrt())
        .collect()
}

/// Unrolls a weight tensor into its kernel matrix.
pub fn unroll(weights: ArrayViewD<f64>, shape: LayerShape) -> Result<KernelMatrix> {
    shape.validate()?;
    let dims = shape.tensor_dims();
    if weights.shape() != dims.as_slice() {
        return Err(Error::shape(format!(
            "weights {:?} do not match {:?} (expected {:?})",
            weights.shape(),
            shape,
            dims
        )));
    }
    let values = match shape {
        LayerShape::Dense { fan_in, fan_out } => weights
            .into_shape_with_order((fan_in, fan_out))
            .map_err(|e| Error::shape(e.to_string()))?
            .to_owned(),
        LayerShape::Conv { out_channels, .. } => {
            let w = weights
                .into_dimensionality::<Ix4>()
                .map_err(|e| Error::shape(e.to_string()))?;
            let m = shape.rows();
            let mut values = Array2::zeros((m, out_channels));
            for (j, filter) in w.axis_iter(Axis(0)).enumerate() {
                // logical iteration order of (in, kr, kc) is the flattening order
                for (dst, &src) in values.column_mut(j).iter_mut().zip(filter.iter()) {
                    *dst = src;
                }
            }
            values
        }
    };
    KernelMatrix::from_columns(values)
}

/// Inverse of [`unroll`]: maps an `m × n` matrix back to the layer's tensor layout.
pub fn fold(grad: ArrayView2<f64>, shape: LayerShape) -> Result<ArrayD<f64>> {
    shape.validate()?;
    if grad.dim() != (shape.rows(), shape.cols()) {
        return Err(Error::shape(format!(
            "matrix {:?} does not match {:?} (expected {:?})",
            grad.dim(),
            shape,
            (shape.rows(), shape.cols())
        )));
    }
    let dims = shape.tensor_dims();
    match shape {
        LayerShape::Dense { .. } => Ok(grad.to_owned().into_dyn()),
        LayerShape::Conv { .. } => {
            let mut out = ArrayD::zeros(IxDyn(&dims));
            for (j, mut filter) in out.axis_iter_mut(Axis(0)).enumerate() {
                for (dst, &src) in filter.iter_mut().zip(grad.column(j).iter()) {
                    *dst = src;
                }
            }
            Ok(out)
        }
    }
}

/// Scales every non-degenerate column to unit norm.
///
/// Degenerate columns come out as exact zeros. The returned matrix keeps the
/// input's `column_norms`, so the raw norms survive repeated normalization.
pub fn normalize_columns(km: &KernelMatrix) -> KernelMatrix {
    let mut values = km.values.clone();
    for mut col in values.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > DEGENERATE_NORM {
            col.mapv_inplace(|v| v / norm);
        } else {
            col.fill(0.0);
        }
    }
    KernelMatrix {
        values,
        column_norms: km.column_norms.clone(),
    }
}
