use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};

use super::im2col::{col2im, im2col, PatchGrid};
use crate::error::{Error, Result};
use crate::kernel::LayerShape;

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Slope [`LEAKY_RELU_SLOPE`] on the negative side.
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the pre-activation `x` and the activation `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

/// Fully connected layer, `y = x · W + b` with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    pub(crate) spectral_u: Option<Array1<f64>>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
            grad_weight: Array2::zeros((fan_in, fan_out)),
            grad_bias: Array1::zeros(fan_out),
            spectral_u: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Geometry of a (transposed) convolution. `in_height`/`in_width` describe the
/// layer's input feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_height: usize,
    pub in_width: usize,
}

impl ConvGeometry {
    pub(crate) fn validate(&self, transposed: bool) -> Result<()> {
        let ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            in_height,
            in_width,
        } = *self;
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::shape(format!("{self:?}: zero-sized convolution")));
        }
        if in_height == 0 || in_width == 0 {
            return Err(Error::shape(format!("{self:?}: empty input map")));
        }
        let fits = if transposed {
            (in_height - 1) * stride + kernel > 2 * padding
                && (in_width - 1) * stride + kernel > 2 * padding
        } else {
            in_height + 2 * padding >= kernel && in_width + 2 * padding >= kernel
        };
        if !fits {
            return Err(Error::shape(format!("{self:?}: kernel does not fit input")));
        }
        Ok(())
    }

    pub fn conv_output(&self) -> (usize, usize) {
        (
            (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1,
            (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn transposed_output(&self) -> (usize, usize) {
        (
            (self.in_height - 1) * self.stride + self.kernel - 2 * self.padding,
            (self.in_width - 1) * self.stride + self.kernel - 2 * self.padding,
        )
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    fn kernel_shape(&self) -> LayerShape {
        LayerShape::Conv {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
        }
    }
}

/// Strided 2-D convolution with weights `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub geometry: ConvGeometry,
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array4<f64>,
    pub grad_bias: Array1<f64>,
    pub(crate) spectral_u: Option<Array1<f64>>,
}

/// Transposed convolution (fractionally strided), the adjoint of [`Conv2d`]'s
/// input map. Weights are stored `(out, in, k, k)` so that, as for `Conv2d`,
/// `weight[j]` is the filter producing output channel `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub geometry: ConvGeometry,
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array4<f64>,
    pub grad_bias: Array1<f64>,
    pub(crate) spectral_u: Option<Array1<f64>>,
}

fn conv_params(g: &ConvGeometry) -> (Array4<f64>, Array1<f64>) {
    (
        Array4::zeros((g.out_channels, g.in_channels, g.kernel, g.kernel)),
        Array1::zeros(g.out_channels),
    )
}

impl Conv2d {
    pub fn zeros(geometry: ConvGeometry) -> Result<Self> {
        geometry.validate(false)?;
        let (weight, bias) = conv_params(&geometry);
        Ok(Conv2d {
            geometry,
            grad_weight: weight.clone(),
            grad_bias: bias.clone(),
            weight,
            bias,
            spectral_u: None,
        })
    }

    fn grid(&self) -> PatchGrid {
        let g = &self.geometry;
        let (grid_h, grid_w) = g.conv_output();
        PatchGrid {
            channels: g.in_channels,
            height: g.in_height,
            width: g.in_width,
            kernel: g.kernel,
            stride: g.stride,
            pad: g.padding,
            grid_h,
            grid_w,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let g = &self.geometry;
        self.weight
            .view()
            .into_shape_with_order((g.out_channels, g.in_channels * g.kernel * g.kernel))
            .expect("conv weights are contiguous")
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let grid = self.grid();
        let spatial = grid.grid_h * grid.grid_w;
        let w = self.weight_matrix();
        let mut out = Array2::zeros((x.nrows(), self.geometry.out_channels * spatial));
        for (xs, mut ys) in x.outer_iter().zip(out.outer_iter_mut()) {
            let cols = im2col(xs.as_slice().expect("contiguous rows"), &grid);
            let y = w.dot(&cols);
            for (o, row) in y.outer_iter().enumerate() {
                let b = self.bias[o];
                for (dst, &v) in ys
                    .slice_mut(ndarray::s![o * spatial..(o + 1) * spatial])
                    .iter_mut()
                    .zip(row.iter())
                {
                    *dst = v + b;
                }
            }
        }
        out
    }

    fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let grid = self.grid();
        let g = self.geometry;
        let spatial = grid.grid_h * grid.grid_w;
        let mut dx = Array2::zeros(x.raw_dim());
        let mut gw = Array2::<f64>::zeros((g.out_channels, g.in_channels * g.kernel * g.kernel));
        for ((xs, dys), mut dxs) in x.outer_iter().zip(dy.outer_iter()).zip(dx.outer_iter_mut()) {
            let cols = im2col(xs.as_slice().expect("contiguous rows"), &grid);
            let dym = dys
                .to_owned()
                .into_shape_with_order((g.out_channels, spatial))
                .expect("output map size");
            gw += &dym.dot(&cols.t());
            for (o, row) in dym.outer_iter().enumerate() {
                self.grad_bias[o] += row.sum();
            }
            let dcols = self.weight_matrix().t().dot(&dym);
            let img = col2im(dcols.view(), &grid);
            dxs.assign(&Array1::from(img));
        }
        let gw = gw
            .into_shape_with_order(self.grad_weight.raw_dim())
            .expect("conv weight size");
        self.grad_weight += &gw;
        dx
    }
}

impl ConvTranspose2d {
    pub fn zeros(geometry: ConvGeometry) -> Result<Self> {
        geometry.validate(true)?;
        let (weight, bias) = conv_params(&geometry);
        Ok(ConvTranspose2d {
            geometry,
            grad_weight: weight.clone(),
            grad_bias: bias.clone(),
            weight,
            bias,
            spectral_u: None,
        })
    }

    /// The patch grid over the OUTPUT map whose positions are the input pixels.
    fn grid(&self) -> PatchGrid {
        let g = &self.geometry;
        let (out_h, out_w) = g.transposed_output();
        PatchGrid {
            channels: g.out_channels,
            height: out_h,
            width: out_w,
            kernel: g.kernel,
            stride: g.stride,
            pad: g.padding,
            grid_h: g.in_height,
            grid_w: g.in_width,
        }
    }

    /// `(out·k·k) × in` matrix with entry `[(o, kr, kc), i] = weight[o, i, kr, kc]`.
    fn scatter_matrix(&self) -> Array2<f64> {
        let g = &self.geometry;
        self.weight
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((g.out_channels * g.kernel * g.kernel, g.in_channels))
            .expect("contiguous after standard layout")
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let grid = self.grid();
        let g = self.geometry;
        let out_spatial = grid.height * grid.width;
        let t = self.scatter_matrix();
        let mut out = Array2::zeros((x.nrows(), g.out_channels * out_spatial));
        for (xs, mut ys) in x.outer_iter().zip(out.outer_iter_mut()) {
            let xm = xs
                .into_shape_with_order((g.in_channels, g.in_height * g.in_width))
                .expect("input map size");
            let cols = t.dot(&xm);
            let img = col2im(cols.view(), &grid);
            for (i, (dst, v)) in ys.iter_mut().zip(img).enumerate() {
                *dst = v + self.bias[i / out_spatial];
            }
        }
        out
    }

    fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let grid = self.grid();
        let g = self.geometry;
        let out_spatial = grid.height * grid.width;
        let t = self.scatter_matrix();
        let mut dt = Array2::<f64>::zeros(t.raw_dim());
        let mut dx = Array2::zeros(x.raw_dim());
        for ((xs, dys), mut dxs) in x.outer_iter().zip(dy.outer_iter()).zip(dx.outer_iter_mut()) {
            let dyv = dys.as_slice().expect("contiguous rows");
            for (o, chunk) in dyv.chunks(out_spatial).enumerate() {
                self.grad_bias[o] += chunk.iter().sum::<f64>();
            }
            let cols = im2col(dyv, &grid);
            let xm = xs
                .into_shape_with_order((g.in_channels, g.in_height * g.in_width))
                .expect("input map size");
            dt += &cols.dot(&xm.t());
            let dxm = t.t().dot(&cols);
            dxs.assign(
                &dxm.into_shape_with_order(g.input_len())
                    .expect("input map size"),
            );
        }
        let dt = dt
            .into_shape_with_order((g.out_channels, g.kernel, g.kernel, g.in_channels))
            .expect("scatter matrix size");
        self.grad_weight += &dt.permuted_axes([0, 3, 1, 2]);
        dx
    }
}

/// Batch normalization over `channels`, each pooling `spatial` positions per sample.
/// Dense features use `spatial = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub spatial: usize,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, spatial: usize) -> Result<Self> {
        if channels == 0 || spatial == 0 {
            return Err(Error::shape("batchnorm over an empty feature map"));
        }
        Ok(BatchNorm {
            channels,
            spatial,
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
        })
    }

    fn channel_of(&self, feature: usize) -> usize {
        feature / self.spatial
    }

    fn batch_stats(&self, x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let count = (x.nrows() * self.spatial) as f64;
        let mut mean = Array1::<f64>::zeros(self.channels);
        for row in x.outer_iter() {
            for (f, &v) in row.iter().enumerate() {
                mean[self.channel_of(f)] += v;
            }
        }
        mean /= count;
        let mut var = Array1::<f64>::zeros(self.channels);
        for row in x.outer_iter() {
            for (f, &v) in row.iter().enumerate() {
                let c = self.channel_of(f);
                var[c] += (v - mean[c]).powi(2);
            }
        }
        var /= count;
        (mean, var)
    }

    fn forward(&mut self, x: &Array2<f64>, train: bool) -> (Array2<f64>, LayerCache) {
        let (mean, var) = if train {
            let (mean, var) = self.batch_stats(x);
            let count = (x.nrows() * self.spatial) as f64;
            let unbiased = if count > 1.0 {
                &var * (count / (count - 1.0))
            } else {
                var.clone()
            };
            self.running_mean =
                &self.running_mean * BATCHNORM_MOMENTUM + &mean * (1.0 - BATCHNORM_MOMENTUM);
            self.running_var =
                &self.running_var * BATCHNORM_MOMENTUM + unbiased * (1.0 - BATCHNORM_MOMENTUM);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BATCHNORM_EPS).sqrt());
        let mut xhat = x.clone();
        for mut row in xhat.outer_iter_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                let c = self.channel_of(f);
                *v = (*v - mean[c]) * inv_std[c];
            }
        }
        let mut y = xhat.clone();
        for mut row in y.outer_iter_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                let c = self.channel_of(f);
                *v = self.gamma[c] * *v + self.beta[c];
            }
        }
        (
            y,
            LayerCache::BatchNorm {
                xhat,
                inv_std,
                train,
            },
        )
    }

    fn backward(
        &mut self,
        xhat: &Array2<f64>,
        inv_std: &Array1<f64>,
        train: bool,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let mut sum_dy = Array1::<f64>::zeros(self.channels);
        let mut sum_dy_xhat = Array1::<f64>::zeros(self.channels);
        Zip::from(xhat.rows()).and(dy.rows()).for_each(|xr, dr| {
            for (f, (&xh, &d)) in xr.iter().zip(dr.iter()).enumerate() {
                let c = f / self.spatial;
                sum_dy[c] += d;
                sum_dy_xhat[c] += d * xh;
            }
        });
        self.grad_beta += &sum_dy;
        self.grad_gamma += &sum_dy_xhat;

        let mut dx = Array2::zeros(dy.raw_dim());
        let count = (dy.nrows() * self.spatial) as f64;
        Zip::from(dx.rows_mut())
            .and(xhat.rows())
            .and(dy.rows())
            .for_each(|mut out, xr, dr| {
                for (f, ((o, &xh), &d)) in out.iter_mut().zip(xr.iter()).zip(dr.iter()).enumerate()
                {
                    let c = f / self.spatial;
                    let scale = self.gamma[c] * inv_std[c];
                    *o = if train {
                        scale * (d - sum_dy[c] / count - xh * sum_dy_xhat[c] / count)
                    } else {
                        scale * d
                    };
                }
            });
        dx
    }
}

/// One stage of a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    ConvTranspose(ConvTranspose2d),
    Activation(Activation),
    BatchNorm(BatchNorm),
}

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Input(Array2<f64>),
    Activation {
        input: Array2<f64>,
        output: Array2<f64>,
    },
    BatchNorm {
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        train: bool,
    },
}

/// Borrowed parameter tensor together with its gradient buffer.
pub struct ParamRef<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

fn slot<'a, D: ndarray::Dimension>(
    value: &'a mut ndarray::Array<f64, D>,
    grad: &'a mut ndarray::Array<f64, D>,
) -> ParamRef<'a> {
    ParamRef {
        value: value.as_slice_mut().expect("parameters are contiguous"),
        grad: grad.as_slice_mut().expect("gradients are contiguous"),
    }
}

impl Layer {
    pub(crate) fn forward(&mut self, x: &Array2<f64>, train: bool) -> (Array2<f64>, LayerCache) {
        match self {
            Layer::Dense(d) => {
                let y = x.dot(&d.weight) + &d.bias;
                (y, LayerCache::Input(x.clone()))
            }
            Layer::Conv(c) => (c.forward(x), LayerCache::Input(x.clone())),
            Layer::ConvTranspose(c) => (c.forward(x), LayerCache::Input(x.clone())),
            Layer::Activation(a) => {
                let a = *a;
                let y = x.mapv(|v| a.apply(v));
                (
                    y.clone(),
                    LayerCache::Activation {
                        input: x.clone(),
                        output: y,
                    },
                )
            }
            Layer::BatchNorm(bn) => bn.forward(x, train),
        }
    }

    pub(crate) fn backward(&mut self, cache: &LayerCache, dy: &Array2<f64>) -> Result<Array2<f64>> {
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Input(x)) => {
                d.grad_weight += &x.t().dot(dy);
                d.grad_bias += &dy.sum_axis(Axis(0));
                Ok(dy.dot(&d.weight.t()))
            }
            (Layer::Conv(c), LayerCache::Input(x)) => Ok(c.backward(x, dy)),
            (Layer::ConvTranspose(c), LayerCache::Input(x)) => Ok(c.backward(x, dy)),
            (Layer::Activation(a), LayerCache::Activation { input, output }) => {
                let a = *a;
                let mut dx = dy.clone();
                Zip::from(&mut dx)
                    .and(input)
                    .and(output)
                    .for_each(|d, &x, &y| *d *= a.derivative(x, y));
                Ok(dx)
            }
            (
                Layer::BatchNorm(bn),
                LayerCache::BatchNorm {
                    xhat,
                    inv_std,
                    train,
                },
            ) => Ok(bn.backward(xhat, inv_std, *train, dy)),
            _ => Err(Error::Usage(
                "forward cache does not belong to this layer".into(),
            )),
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            Layer::Dense(_) | Layer::Conv(_) | Layer::ConvTranspose(_)
        )
    }

    /// Kernel-matrix geometry of a weight-bearing layer.
    pub fn kernel_shape(&self) -> Option<LayerShape> {
        match self {
            Layer::Dense(d) => Some(LayerShape::Dense {
                fan_in: d.fan_in(),
                fan_out: d.fan_out(),
            }),
            Layer::Conv(c) => Some(c.geometry.kernel_shape()),
            Layer::ConvTranspose(c) => Some(c.geometry.kernel_shape()),
            _ => None,
        }
    }

    pub fn weight_view(&self) -> Option<ArrayViewD<'_, f64>> {
        match self {
            Layer::Dense(d) => Some(d.weight.view().into_dyn()),
            Layer::Conv(c) => Some(c.weight.view().into_dyn()),
            Layer::ConvTranspose(c) => Some(c.weight.view().into_dyn()),
            _ => None,
        }
    }

    pub(crate) fn weight_view_mut(&mut self) -> Option<ArrayViewMutD<'_, f64>> {
        match self {
            Layer::Dense(d) => Some(d.weight.view_mut().into_dyn()),
            Layer::Conv(c) => Some(c.weight.view_mut().into_dyn()),
            Layer::ConvTranspose(c) => Some(c.weight.view_mut().into_dyn()),
            _ => None,
        }
    }

    pub fn weight_grad_view(&self) -> Option<ArrayViewD<'_, f64>> {
        match self {
            Layer::Dense(d) => Some(d.grad_weight.view().into_dyn()),
            Layer::Conv(c) => Some(c.grad_weight.view().into_dyn()),
            Layer::ConvTranspose(c) => Some(c.grad_weight.view().into_dyn()),
            _ => None,
        }
    }

    pub fn weight_grad_view_mut(&mut self) -> Option<ArrayViewMutD<'_, f64>> {
        match self {
            Layer::Dense(d) => Some(d.grad_weight.view_mut().into_dyn()),
            Layer::Conv(c) => Some(c.grad_weight.view_mut().into_dyn()),
            Layer::ConvTranspose(c) => Some(c.grad_weight.view_mut().into_dyn()),
            _ => None,
        }
    }

    pub(crate) fn spectral_u_mut(&mut self) -> Option<&mut Option<Array1<f64>>> {
        match self {
            Layer::Dense(d) => Some(&mut d.spectral_u),
            Layer::Conv(c) => Some(&mut c.spectral_u),
            Layer::ConvTranspose(c) => Some(&mut c.spectral_u),
            _ => None,
        }
    }

    /// All trainable tensors in a fixed order: weight, bias (or gamma, beta).
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        match self {
            Layer::Dense(d) => vec![
                slot(&mut d.weight, &mut d.grad_weight),
                slot(&mut d.bias, &mut d.grad_bias),
            ],
            Layer::Conv(Conv2d {
                weight,
                bias,
                grad_weight,
                grad_bias,
                ..
            })
            | Layer::ConvTranspose(ConvTranspose2d {
                weight,
                bias,
                grad_weight,
                grad_bias,
                ..
            }) => vec![slot(weight, grad_weight), slot(bias, grad_bias)],
            Layer::BatchNorm(bn) => vec![
                slot(&mut bn.gamma, &mut bn.grad_gamma),
                slot(&mut bn.beta, &mut bn.grad_beta),
            ],
            Layer::Activation(_) => Vec::new(),
        }
    }
}
