//! Little-endian binary checkpoints.
//!
//! ```text
//! magic    8 bytes  "DRLCKPT1"
//! layers   u32
//! per layer:
//!   tag    u8       0 dense, 1 conv, 2 transposed conv, 3 activation, 4 batchnorm
//!   dense:        fan_in u32, fan_out u32, weight f64[fan_in·fan_out], bias f64[fan_out]
//!   conv / convT: in_ch u32, out_ch u32, kernel u32, stride u32, padding u32,
//!                 in_h u32, in_w u32, weight f64[out·in·k·k], bias f64[out]
//!   activation:   kind u8 (0 relu, 1 leaky relu, 2 tanh, 3 sigmoid)
//!   batchnorm:    channels u32, spatial u32, gamma, beta, running_mean, running_var (f64[channels] each)
//! ```
//!
//! Arrays are written row-major in declaration order. Gradients, optimizer state
//! and spectral-norm vectors are not stored.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array4};

use super::layer::{Activation, BatchNorm, Conv2d, ConvGeometry, ConvTranspose2d, Dense, Layer};
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DRLCKPT1";

const TAG_DENSE: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_CONV_T: u8 = 2;
const TAG_ACTIVATION: u8 = 3;
const TAG_BATCHNORM: u8 = 4;

fn write_array<'a, W: Write>(
    w: &mut W,
    values: impl IntoIterator<Item = &'a f64>,
) -> io::Result<()> {
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn write_geometry<W: Write>(w: &mut W, g: &ConvGeometry) -> io::Result<()> {
    for v in [
        g.in_channels,
        g.out_channels,
        g.kernel,
        g.stride,
        g.padding,
        g.in_height,
        g.in_width,
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    Ok(())
}

pub fn write_network<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(net.layers().len() as u32)?;
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                w.write_u8(TAG_DENSE)?;
                w.write_u32::<LittleEndian>(d.fan_in() as u32)?;
                w.write_u32::<LittleEndian>(d.fan_out() as u32)?;
                write_array(w, d.weight.iter())?;
                write_array(w, d.bias.iter())?;
            }
            Layer::Conv(c) => {
                w.write_u8(TAG_CONV)?;
                write_geometry(w, &c.geometry)?;
                write_array(w, c.weight.iter())?;
                write_array(w, c.bias.iter())?;
            }
            Layer::ConvTranspose(c) => {
                w.write_u8(TAG_CONV_T)?;
                write_geometry(w, &c.geometry)?;
                write_array(w, c.weight.iter())?;
                write_array(w, c.bias.iter())?;
            }
            Layer::Activation(a) => {
                w.write_u8(TAG_ACTIVATION)?;
                w.write_u8(a.tag())?;
            }
            Layer::BatchNorm(bn) => {
                w.write_u8(TAG_BATCHNORM)?;
                w.write_u32::<LittleEndian>(bn.channels as u32)?;
                w.write_u32::<LittleEndian>(bn.spatial as u32)?;
                write_array(w, bn.gamma.iter())?;
                write_array(w, bn.beta.iter())?;
                write_array(w, bn.running_mean.iter())?;
                write_array(w, bn.running_var.iter())?;
            }
        }
    }
    Ok(())
}

/// Reader that tracks the byte offset for error reports.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn truncated(&self, what: &str) -> Error {
        Error::format(
            self.offset,
            format!("truncated checkpoint while reading {what}"),
        )
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let v = self.inner.read_u8().map_err(|_| self.truncated(what))?;
        self.offset += 1;
        Ok(v)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let v = self
            .inner
            .read_u32::<LittleEndian>()
            .map_err(|_| self.truncated(what))?;
        self.offset += 4;
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(
                self.inner
                    .read_f64::<LittleEndian>()
                    .map_err(|_| self.truncated(what))?,
            );
            self.offset += 8;
        }
        Ok(out)
    }

    fn geometry(&mut self) -> Result<ConvGeometry> {
        Ok(ConvGeometry {
            in_channels: self.u32("in_channels")?,
            out_channels: self.u32("out_channels")?,
            kernel: self.u32("kernel")?,
            stride: self.u32("stride")?,
            padding: self.u32("padding")?,
            in_height: self.u32("in_height")?,
            in_width: self.u32("in_width")?,
        })
    }
}

fn conv_tensors(c: &mut Cursor<impl Read>, g: &ConvGeometry) -> Result<(Array4<f64>, Array1<f64>)> {
    let dims = (g.out_channels, g.in_channels, g.kernel, g.kernel);
    let w = c.f64s(dims.0 * dims.1 * dims.2 * dims.3, "conv weight")?;
    let b = c.f64s(g.out_channels, "conv bias")?;
    Ok((
        Array4::from_shape_vec(dims, w).expect("length computed from dims"),
        Array1::from(b),
    ))
}

/// Reads one network written by [`write_network`].
pub fn read_network<R: Read>(r: &mut R) -> Result<Network> {
    read_network_at(r, 0).map(|(net, _)| net)
}

pub(crate) fn read_network_at<R: Read>(r: &mut R, start: u64) -> Result<(Network, u64)> {
    let mut c = Cursor {
        inner: r,
        offset: start,
    };
    let mut magic = [0u8; 8];
    c.inner
        .read_exact(&mut magic)
        .map_err(|_| c.truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::format(start, "bad checkpoint magic"));
    }
    c.offset += 8;
    let count = c.u32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(1024));
    let mut input_dim = None;
    for _ in 0..count {
        let tag_offset = c.offset;
        let tag = c.u8("layer tag")?;
        let layer = match tag {
            TAG_DENSE => {
                let fan_in = c.u32("fan_in")?;
                let fan_out = c.u32("fan_out")?;
                let mut d = Dense::zeros(fan_in, fan_out);
                d.weight = Array2::from_shape_vec(
                    (fan_in, fan_out),
                    c.f64s(fan_in * fan_out, "dense weight")?,
                )
                .expect("length computed from dims");
                d.bias = Array1::from(c.f64s(fan_out, "dense bias")?);
                input_dim.get_or_insert(fan_in);
                Layer::Dense(d)
            }
            TAG_CONV | TAG_CONV_T => {
                let g = c.geometry()?;
                let (w, b) = conv_tensors(&mut c, &g)?;
                input_dim.get_or_insert(g.input_len());
                if tag == TAG_CONV {
                    let mut conv =
                        Conv2d::zeros(g).map_err(|e| Error::format(tag_offset, e.to_string()))?;
                    conv.weight = w;
                    conv.bias = b;
                    Layer::Conv(conv)
                } else {
                    let mut conv = ConvTranspose2d::zeros(g)
                        .map_err(|e| Error::format(tag_offset, e.to_string()))?;
                    conv.weight = w;
                    conv.bias = b;
                    Layer::ConvTranspose(conv)
                }
            }
            TAG_ACTIVATION => {
                let kind_offset = c.offset;
                let kind = c.u8("activation kind")?;
                Layer::Activation(Activation::from_tag(kind).ok_or_else(|| {
                    Error::format(kind_offset, format!("unknown activation {kind}"))
                })?)
            }
            TAG_BATCHNORM => {
                let channels = c.u32("channels")?;
                let spatial = c.u32("spatial")?;
                let mut bn = BatchNorm::new(channels, spatial)
                    .map_err(|e| Error::format(tag_offset, e.to_string()))?;
                bn.gamma = Array1::from(c.f64s(channels, "gamma")?);
                bn.beta = Array1::from(c.f64s(channels, "beta")?);
                bn.running_mean = Array1::from(c.f64s(channels, "running mean")?);
                bn.running_var = Array1::from(c.f64s(channels, "running variance")?);
                input_dim.get_or_insert(channels * spatial);
                Layer::BatchNorm(bn)
            }
            other => {
                return Err(Error::format(
                    tag_offset,
                    format!("unknown layer tag {other}"),
                ))
            }
        };
        layers.push(layer);
    }
    let input_dim =
        input_dim.ok_or_else(|| Error::format(start, "checkpoint has no sized layers"))?;
    let net =
        Network::from_layers(layers, input_dim).map_err(|e| Error::format(start, e.to_string()))?;
    Ok((net, c.offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{FeatureShape, LayerSpec};

    fn sample_net() -> Network {
        Network::init(
            FeatureShape::flat(8),
            &[
                LayerSpec::Dense { units: 2 * 2 * 2 },
                LayerSpec::BatchNorm,
                LayerSpec::Activation(Activation::Relu),
                LayerSpec::Reshape {
                    channels: 2,
                    height: 2,
                    width: 2,
                },
                LayerSpec::ConvTranspose {
                    channels: 3,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Conv {
                    channels: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Activation(Activation::Tanh),
            ],
            7,
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let net = sample_net();
        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 6);
        let back = read_network(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let net = sample_net();
        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        match read_network(&mut bad.as_slice()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let cut = &buf[..40];
        match read_network(&mut &cut[..]) {
            Err(Error::Format { offset, .. }) => assert!((12..=40).contains(&offset)),
            other => panic!("{other:?}"),
        }
    }
}
