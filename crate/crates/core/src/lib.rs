//! Diversity-regularized adversarial learning.
//!
//! A GAN's layer weights are viewed as kernel matrices (one column per output
//! filter); a masked penalty on their pairwise Gram entries discourages
//! redundant filters in both the generator and the discriminator. The crate
//! carries its own small `f64` network engine with manual backpropagation so
//! every gradient can be checked against finite differences.

pub mod cli;
pub mod data;
pub mod diversity;
pub mod error;
pub mod gan;
pub mod gradcheck;
pub mod kernel;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
