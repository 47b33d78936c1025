//! Minimal feed-forward network engine with manual backpropagation.
//!
//! Batches are `N × features` matrices; image features are flattened in
//! `(channel, row, col)` order. All arithmetic is `f64`.

mod adam;
pub mod checkpoint;
mod im2col;
mod layer;
mod network;
mod spectral;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layer::{
    Activation, BatchNorm, Conv2d, ConvGeometry, ConvTranspose2d, Dense, Layer, LayerCache,
    ParamRef, BATCHNORM_EPS, BATCHNORM_MOMENTUM, LEAKY_RELU_SLOPE,
};
pub use network::{FeatureShape, ForwardPass, LayerSpec, Mode, Network, INIT_STD};
pub use spectral::{initial_u, power_iteration};
