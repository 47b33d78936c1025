use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_network_at, write_network};
use crate::nn::{Activation, AdamConfig, AdamState, FeatureShape, LayerSpec, Network};

/// Weight-conditioning scheme applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularizer {
    None,
    #[default]
    Direal,
    Spectral,
    Clip(f64),
    /// Adds batch normalization to the discriminator's hidden layers.
    BatchnormOnly,
    DirealSpectral,
}

impl Regularizer {
    pub fn uses_direal(&self) -> bool {
        matches!(self, Regularizer::Direal | Regularizer::DirealSpectral)
    }

    pub fn uses_spectral(&self) -> bool {
        matches!(self, Regularizer::Spectral | Regularizer::DirealSpectral)
    }

    pub fn clip_bound(&self) -> Option<f64> {
        match self {
            Regularizer::Clip(c) => Some(*c),
            _ => None,
        }
    }

    pub fn discriminator_batchnorm(&self) -> bool {
        matches!(self, Regularizer::BatchnormOnly)
    }

    /// Parses the mode name; `clip` takes its bound separately.
    pub fn parse(name: &str, clip: f64) -> Result<Self> {
        Ok(match name {
            "none" => Regularizer::None,
            "direal" => Regularizer::Direal,
            "spectral" => Regularizer::Spectral,
            "clip" => {
                if clip.is_nan() || clip <= 0.0 {
                    return Err(Error::config("clip", format!("must be > 0, got {clip}")));
                }
                Regularizer::Clip(clip)
            }
            "batchnorm" => Regularizer::BatchnormOnly,
            "direal+spectral" => Regularizer::DirealSpectral,
            other => {
                return Err(Error::config(
                    "regularizer",
                    format!(
                    "expected none|direal|spectral|clip|batchnorm|direal+spectral, got `{other}`"
                ),
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Direal => "direal",
            Regularizer::Spectral => "spectral",
            Regularizer::Clip(_) => "clip",
            Regularizer::BatchnormOnly => "batchnorm",
            Regularizer::DirealSpectral => "direal+spectral",
        }
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("clip(").and_then(|r| r.strip_suffix(')')) {
            Some(bound) => {
                let c = bound.parse().map_err(|_| {
                    Error::config("regularizer", format!("bad clip bound `{bound}`"))
                })?;
                Regularizer::parse("clip", c)
            }
            None => Regularizer::parse(s, 0.01),
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::Clip(c) => write!(f, "clip({c})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Network family used for both players.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Fully connected networks for flat data. `depth` hidden layers of `hidden` units;
    /// the generator's output layer is linear.
    Mlp { hidden: usize, depth: usize },
    /// DCGAN-style networks for single-channel images whose sides are divisible by 4.
    /// `width` is the channel count of the first discriminator convolution.
    Dcgan { width: usize },
}

impl Architecture {
    pub fn generator_specs(&self, item_shape: &[usize]) -> Result<Vec<LayerSpec>> {
        match *self {
            Architecture::Mlp { hidden, depth } => {
                let out: usize = item_shape.iter().product();
                let mut specs = Vec::new();
                for _ in 0..depth {
                    specs.push(LayerSpec::Dense { units: hidden });
                    specs.push(LayerSpec::BatchNorm);
                    specs.push(LayerSpec::Activation(Activation::Relu));
                }
                specs.push(LayerSpec::Dense { units: out });
                Ok(specs)
            }
            Architecture::Dcgan { width } => {
                let (h, w) = image_dims(item_shape)?;
                let (h4, w4) = (h / 4, w / 4);
                Ok(vec![
                    LayerSpec::Dense {
                        units: 2 * width * h4 * w4,
                    },
                    LayerSpec::BatchNorm,
                    LayerSpec::Activation(Activation::Relu),
                    LayerSpec::Reshape {
                        channels: 2 * width,
                        height: h4,
                        width: w4,
                    },
                    LayerSpec::ConvTranspose {
                        channels: width,
                        kernel: 4,
                        stride: 2,
                        padding: 1,
                    },
                    LayerSpec::BatchNorm,
                    LayerSpec::Activation(Activation::Relu),
                    LayerSpec::ConvTranspose {
                        channels: 1,
                        kernel: 4,
                        stride: 2,
                        padding: 1,
                    },
                    LayerSpec::Activation(Activation::Tanh),
                ])
            }
        }
    }

    pub fn discriminator_specs(
        &self,
        item_shape: &[usize],
        batchnorm: bool,
    ) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::new();
        match *self {
            Architecture::Mlp { hidden, depth } => {
                for _ in 0..depth {
                    specs.push(LayerSpec::Dense { units: hidden });
                    if batchnorm {
                        specs.push(LayerSpec::BatchNorm);
                    }
                    specs.push(LayerSpec::Activation(Activation::LeakyRelu));
                }
            }
            Architecture::Dcgan { width } => {
                image_dims(item_shape)?;
                specs.push(LayerSpec::Conv {
                    channels: width,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                });
                specs.push(LayerSpec::Activation(Activation::LeakyRelu));
                specs.push(LayerSpec::Conv {
                    channels: 2 * width,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                });
                if batchnorm {
                    specs.push(LayerSpec::BatchNorm);
                }
                specs.push(LayerSpec::Activation(Activation::LeakyRelu));
            }
        }
        specs.push(LayerSpec::Dense { units: 1 });
        specs.push(LayerSpec::Activation(Activation::Sigmoid));
        Ok(specs)
    }

    pub fn input_shape(&self, item_shape: &[usize]) -> Result<FeatureShape> {
        match self {
            Architecture::Mlp { .. } => Ok(FeatureShape::flat(item_shape.iter().product())),
            Architecture::Dcgan { .. } => {
                let (h, w) = image_dims(item_shape)?;
                Ok(FeatureShape::image(1, h, w))
            }
        }
    }
}

fn image_dims(item_shape: &[usize]) -> Result<(usize, usize)> {
    match *item_shape {
        [1, h, w] if h % 4 == 0 && w % 4 == 0 && h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::config(
            "architecture",
            format!("dcgan needs 1×H×W items with H, W divisible by 4, got {item_shape:?}"),
        )),
    }
}

/// Both players, their optimizers and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: Network,
    pub discriminator: Network,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
    pub step: u64,
}

impl GanModel {
    pub fn new(generator: Network, discriminator: Network, adam: AdamConfig) -> Result<Self> {
        if generator.output_dim() != discriminator.input_dim() {
            return Err(Error::shape(format!(
                "generator emits {} features, discriminator expects {}",
                generator.output_dim(),
                discriminator.input_dim()
            )));
        }
        if discriminator.output_dim() != 1 {
            return Err(Error::shape("discriminator must emit one probability"));
        }
        Ok(GanModel {
            generator,
            discriminator,
            g_opt: AdamState::new(adam),
            d_opt: AdamState::new(adam),
            step: 0,
        })
    }

    /// Initializes both networks for `item_shape` data. The generator is seeded
    /// with `seed`, the discriminator with `seed + 1`.
    pub fn build(
        arch: Architecture,
        item_shape: &[usize],
        latent_dim: usize,
        regularizer: Regularizer,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be >= 1"));
        }
        let generator = Network::init(
            FeatureShape::flat(latent_dim),
            &arch.generator_specs(item_shape)?,
            seed,
        )?;
        let discriminator = Network::init(
            arch.input_shape(item_shape)?,
            &arch.discriminator_specs(item_shape, regularizer.discriminator_batchnorm())?,
            seed.wrapping_add(1),
        )?;
        Self::new(generator, discriminator, adam)
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.input_dim()
    }

    /// Writes the generator then the discriminator, each as a standalone network checkpoint.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        write_network(w, &self.generator)?;
        write_network(w, &self.discriminator)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Restores both networks; optimizer state starts fresh with `adam`.
    pub fn read_checkpoint<R: Read>(r: &mut R, adam: AdamConfig) -> Result<Self> {
        let (generator, end) = read_network_at(r, 0)?;
        let (discriminator, _) = read_network_at(r, end)?;
        Self::new(generator, discriminator, adam).map_err(|e| Error::format(end, e.to_string()))
    }

    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_checkpoint(&mut r, adam)
    }
}
