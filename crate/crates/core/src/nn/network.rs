use ndarray::{Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layer::{
    Activation, BatchNorm, Conv2d, ConvGeometry, ConvTranspose2d, Dense, Layer, LayerCache,
    ParamRef,
};
use crate::error::{Error, Result};
use crate::kernel::{unroll, KernelMatrix, LayerShape};

/// Standard deviation of the DCGAN-convention weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Shape of one sample flowing between layers. Dense features are `(n, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn flat(features: usize) -> Self {
        FeatureShape {
            channels: features,
            height: 1,
            width: 1,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        FeatureShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Declarative description of one layer, resolved against the running feature shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Activation(Activation),
    BatchNorm,
    /// Reinterprets the flat feature vector as a `(c, h, w)` map. No parameters.
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Ordered layers of a feed-forward network together with their gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    version: u64,
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    caches: Vec<LayerCache>,
    version: u64,
    output: Array2<f64>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

fn layer_output_shape(layer: &Layer, input: FeatureShape) -> FeatureShape {
    match layer {
        Layer::Dense(d) => FeatureShape::flat(d.fan_out()),
        Layer::Conv(c) => {
            let (h, w) = c.geometry.conv_output();
            FeatureShape::image(c.geometry.out_channels, h, w)
        }
        Layer::ConvTranspose(c) => {
            let (h, w) = c.geometry.transposed_output();
            FeatureShape::image(c.geometry.out_channels, h, w)
        }
        Layer::Activation(_) | Layer::BatchNorm(_) => input,
    }
}

impl Network {
    /// Builds a network with DCGAN-convention initialization: weights drawn from
    /// `Normal(0, 0.02)`, zero biases, `gamma = 1`, `beta = 0`, unit running variance.
    pub fn init(input: FeatureShape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::shape("network input must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::shape("dense layer with zero units"));
                    }
                    let mut d = Dense::zeros(shape.len(), units);
                    d.weight.mapv_inplace(|_| normal.sample(&mut rng));
                    Layer::Dense(d)
                }
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let mut c = Conv2d::zeros(ConvGeometry {
                        in_channels: shape.channels,
                        out_channels: channels,
                        kernel,
                        stride,
                        padding,
                        in_height: shape.height,
                        in_width: shape.width,
                    })?;
                    c.weight.mapv_inplace(|_| normal.sample(&mut rng));
                    Layer::Conv(c)
                }
                LayerSpec::ConvTranspose {
                    channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let mut c = ConvTranspose2d::zeros(ConvGeometry {
                        in_channels: shape.channels,
                        out_channels: channels,
                        kernel,
                        stride,
                        padding,
                        in_height: shape.height,
                        in_width: shape.width,
                    })?;
                    c.weight.mapv_inplace(|_| normal.sample(&mut rng));
                    Layer::ConvTranspose(c)
                }
                LayerSpec::Activation(a) => Layer::Activation(a),
                LayerSpec::BatchNorm => {
                    Layer::BatchNorm(BatchNorm::new(shape.channels, shape.height * shape.width)?)
                }
                LayerSpec::Reshape {
                    channels,
                    height,
                    width,
                } => {
                    let next = FeatureShape::image(channels, height, width);
                    if next.len() != shape.len() {
                        return Err(Error::shape(format!(
                            "cannot reshape {} features into {:?}",
                            shape.len(),
                            next
                        )));
                    }
                    shape = next;
                    continue;
                }
            };
            shape = layer_output_shape(&layer, shape);
            layers.push(layer);
        }
        Self::from_layers(layers, input.len())
    }

    /// Assembles a network from explicit layers, checking that consecutive
    /// feature sizes agree.
    pub fn from_layers(layers: Vec<Layer>, input_dim: usize) -> Result<Self> {
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            dim = match layer {
                Layer::Dense(d) => {
                    if d.fan_in() != dim {
                        return Err(Error::shape(format!(
                            "layer {i}: dense expects {} inputs, got {dim}",
                            d.fan_in()
                        )));
                    }
                    d.fan_out()
                }
                Layer::Conv(c) => {
                    if c.geometry.input_len() != dim {
                        return Err(Error::shape(format!(
                            "layer {i}: conv expects {} inputs, got {dim}",
                            c.geometry.input_len()
                        )));
                    }
                    let (h, w) = c.geometry.conv_output();
                    c.geometry.out_channels * h * w
                }
                Layer::ConvTranspose(c) => {
                    if c.geometry.input_len() != dim {
                        return Err(Error::shape(format!(
                            "layer {i}: transposed conv expects {} inputs, got {dim}",
                            c.geometry.input_len()
                        )));
                    }
                    let (h, w) = c.geometry.transposed_output();
                    c.geometry.out_channels * h * w
                }
                Layer::BatchNorm(bn) => {
                    if bn.channels * bn.spatial != dim {
                        return Err(Error::shape(format!(
                            "layer {i}: batchnorm covers {} features, got {dim}",
                            bn.channels * bn.spatial
                        )));
                    }
                    dim
                }
                Layer::Activation(_) => dim,
            };
        }
        Ok(Network {
            layers,
            input_dim,
            output_dim: dim,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Incremented whenever parameters change; forward caches are tied to it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn touch(&mut self) {
        self.version += 1;
    }

    pub fn forward(&mut self, batch: &Array2<f64>, mode: Mode) -> Result<ForwardPass> {
        if batch.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.input_dim
            )));
        }
        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.as_standard_layout().into_owned();
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&x, train);
            caches.push(cache);
            x = y;
        }
        Ok(ForwardPass {
            caches,
            version: self.version,
            output: x,
        })
    }

    /// Accumulates parameter gradients for `output_grad` and returns the gradient
    /// with respect to the network input.
    pub fn backward(
        &mut self,
        pass: &ForwardPass,
        output_grad: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        if pass.version != self.version || pass.caches.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "stale forward cache (cache version {}, network version {})",
                pass.version, self.version
            )));
        }
        if output_grad.dim() != pass.output.dim() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.dim(),
                pass.output.dim()
            )));
        }
        let mut grad = output_grad.as_standard_layout().into_owned();
        for (layer, cache) in self.layers.iter_mut().zip(&pass.caches).rev() {
            grad = layer.backward(cache, &grad)?;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.weight.len() + d.bias.len(),
                Layer::Conv(c) => c.weight.len() + c.bias.len(),
                Layer::ConvTranspose(c) => c.weight.len() + c.bias.len(),
                Layer::BatchNorm(bn) => 2 * bn.channels,
                Layer::Activation(_) => 0,
            })
            .sum()
    }

    /// Positions in [`Self::layers`] of the weight-bearing layers. Diversity
    /// layer selections index into this list.
    pub fn weight_layer_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_weight_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.is_weighted()).count()
    }

    fn weight_layer(&self, index: usize) -> Result<&Layer> {
        self.layers
            .iter()
            .filter(|l| l.is_weighted())
            .nth(index)
            .ok_or_else(|| {
                Error::config(
                    "layers",
                    format!(
                        "weight layer {index} out of range ({} weight layers)",
                        self.num_weight_layers()
                    ),
                )
            })
    }

    pub(crate) fn weight_layer_mut(&mut self, index: usize) -> Result<&mut Layer> {
        let count = self.num_weight_layers();
        self.layers
            .iter_mut()
            .filter(|l| l.is_weighted())
            .nth(index)
            .ok_or_else(|| {
                Error::config(
                    "layers",
                    format!("weight layer {index} out of range ({count} weight layers)"),
                )
            })
    }

    pub fn weight_shape(&self, index: usize) -> Result<LayerShape> {
        Ok(self
            .weight_layer(index)?
            .kernel_shape()
            .expect("weight layers have a kernel shape"))
    }

    pub fn weights(&self, index: usize) -> Result<ArrayViewD<'_, f64>> {
        Ok(self.weight_layer(index)?.weight_view().expect("weighted"))
    }

    /// Mutable weights; invalidates outstanding forward caches.
    pub fn weights_mut(&mut self, index: usize) -> Result<ArrayViewMutD<'_, f64>> {
        self.touch();
        Ok(self
            .weight_layer_mut(index)?
            .weight_view_mut()
            .expect("weighted"))
    }

    pub fn weight_grad(&self, index: usize) -> Result<ArrayViewD<'_, f64>> {
        Ok(self
            .weight_layer(index)?
            .weight_grad_view()
            .expect("weighted"))
    }

    pub fn weight_grad_mut(&mut self, index: usize) -> Result<ArrayViewMutD<'_, f64>> {
        Ok(self
            .weight_layer_mut(index)?
            .weight_grad_view_mut()
            .expect("weighted"))
    }

    pub fn kernel_matrix(&self, index: usize) -> Result<KernelMatrix> {
        let layer = self.weight_layer(index)?;
        unroll(
            layer.weight_view().expect("weighted"),
            layer.kernel_shape().expect("weighted"),
        )
    }

    /// Clamps every weight entry to `[-c, c]`. Biases and normalization
    /// parameters are left alone.
    pub fn weight_clip(&mut self, c: f64) -> Result<()> {
        if c.is_nan() || c <= 0.0 {
            return Err(Error::config(
                "clip",
                format!("clip bound must be > 0, got {c}"),
            ));
        }
        for layer in &mut self.layers {
            if let Some(mut w) = layer.weight_view_mut() {
                w.mapv_inplace(|v| v.clamp(-c, c));
            }
        }
        self.touch();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn mlp(seed: u64) -> Network {
        Network::init(
            FeatureShape::flat(3),
            &[
                LayerSpec::Dense { units: 4 },
                LayerSpec::Activation(Activation::LeakyRelu),
                LayerSpec::Dense { units: 1 },
                LayerSpec::Activation(Activation::Sigmoid),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut d = Dense::zeros(2, 2);
        d.weight = array![[1.0, 0.0], [0.0, 1.0]];
        let mut net = Network::from_layers(vec![Layer::Dense(d)], 2).unwrap();
        let x = array![[0.3, -1.5], [2.0, 7.0]];
        let pass = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(pass.output(), &x);
    }

    #[test]
    fn sigmoid_head_is_a_probability() {
        let mut net = mlp(3);
        let x = Array2::from_shape_fn((16, 3), |(i, j)| (i as f64 - 8.0) * (j as f64 + 1.0));
        let out = net.forward(&x, Mode::Eval).unwrap().into_output();
        assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let a = mlp(9).forward(&x, Mode::Train).unwrap().into_output();
        let b = mlp(9).forward(&x, Mode::Train).unwrap().into_output();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn init_is_reproducible_and_dcgan_style() {
        let a = mlp(42);
        let b = mlp(42);
        assert_eq!(a, b);
        assert_ne!(a, mlp(43));
        match &a.layers()[0] {
            Layer::Dense(d) => assert!(d.bias.iter().all(|&b| b == 0.0)),
            _ => unreachable!(),
        }
        let bn = Network::init(
            FeatureShape::flat(4),
            &[LayerSpec::Dense { units: 3 }, LayerSpec::BatchNorm],
            1,
        )
        .unwrap();
        match &bn.layers()[1] {
            Layer::BatchNorm(b) => {
                assert!(b.running_var.iter().all(|&v| v == 1.0));
                assert!(b.gamma.iter().all(|&v| v == 1.0));
                assert!(b.beta.iter().all(|&v| v == 0.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn init_weight_mean_within_three_sigma() {
        // 10^5 draws of N(0, 0.02): the sample mean has std 0.02 / sqrt(1e5).
        let net = Network::init(
            FeatureShape::flat(400),
            &[LayerSpec::Dense { units: 250 }],
            5,
        )
        .unwrap();
        let w = net.weights(0).unwrap();
        assert_eq!(w.len(), 100_000);
        let mean = w.sum() / w.len() as f64;
        assert!(mean.abs() < 3.0 * INIT_STD / (1e5f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn shape_mismatch_and_stale_cache() {
        let mut net = mlp(1);
        assert!(matches!(
            net.forward(&Array2::zeros((2, 4)), Mode::Train),
            Err(Error::Shape(_))
        ));
        let pass = net.forward(&Array2::zeros((2, 3)), Mode::Train).unwrap();
        net.weight_clip(1.0).unwrap();
        assert!(matches!(
            net.backward(&pass, &Array2::zeros((2, 1))),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let mut net = mlp(2);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        let pass = net.forward(&x, Mode::Train).unwrap();
        net.backward(&pass, &Array2::zeros((4, 1))).unwrap();
        for p in net.params_mut() {
            assert!(p.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn weight_clip_bounds_and_idempotence() {
        let mut net = mlp(4);
        net.weights_mut(0).unwrap()[[0, 0]] = 0.5;
        net.weights_mut(0).unwrap()[[1, 0]] = -0.5;
        net.weight_clip(0.01).unwrap();
        let w = net.weights(0).unwrap();
        assert_eq!(w[[0, 0]], 0.01);
        assert_eq!(w[[1, 0]], -0.01);
        let once = net.clone();
        net.weight_clip(0.01).unwrap();
        assert_eq!(once.layers(), net.layers());
        assert!(net.weight_clip(0.0).is_err());

        let mut inside = mlp(4);
        let before = inside.clone();
        inside.weight_clip(1.0).unwrap();
        assert_eq!(before.layers(), inside.layers());
    }

    #[test]
    fn dense_backward_hand_computed() {
        // y = x W, loss = 0.5 * |y - t|^2 ; dL/dW = x^T (y - t)
        let mut d = Dense::zeros(2, 2);
        d.weight = array![[1.0, 2.0], [3.0, 4.0]];
        let mut net = Network::from_layers(vec![Layer::Dense(d)], 2).unwrap();
        let x = array![[1.0, -1.0]];
        let t = array![[0.0, 0.0]];
        let pass = net.forward(&x, Mode::Train).unwrap();
        // y = [1-3, 2-4] = [-2, -2]
        assert_eq!(pass.output(), &array![[-2.0, -2.0]]);
        let dy = pass.output() - &t;
        let dx = net.backward(&pass, &dy).unwrap();
        // dW = [[1],[−1]] · [−2, −2] = [[−2, −2], [2, 2]]
        assert_eq!(
            net.weight_grad(0)
                .unwrap()
                .to_owned()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap(),
            array![[-2.0, -2.0], [2.0, 2.0]]
        );
        // dx = dy W^T = [−2·1 − 2·2, −2·3 − 2·4] = [−6, −14]
        assert_eq!(dx, array![[-6.0, -14.0]]);
        match &net.layers()[0] {
            Layer::Dense(d) => assert_eq!(d.grad_bias, array![-2.0, -2.0]),
            _ => unreachable!(),
        }
    }
}
