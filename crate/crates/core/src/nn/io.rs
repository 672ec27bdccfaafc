//! `BNNM` model files: magic, version, a JSON descriptor, then every tensor
//! in layer order as `u32` rank, `u32` dims and little-endian `f32` values.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::layers::{Activation, ConvLayer, DenseLayer, Padding};
use super::network::{Layer, Network, Shape};
use crate::binio;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BNNM";
pub const VERSION: u16 = 1;
const DESCRIPTOR_LIMIT: usize = 16 << 20;
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerDesc {
    Standardize {
        len: usize,
    },
    Conv {
        in_depth: usize,
        depth: usize,
        kernel: usize,
        padding: Padding,
    },
    Relu,
    Maxpool,
    Dropout {
        keep_prob: f64,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    input: Shape,
    layers: Vec<LayerDesc>,
    meta: serde_json::Value,
}

fn describe(l: &Layer) -> LayerDesc {
    match l {
        Layer::Standardize { mean, .. } => LayerDesc::Standardize { len: mean.len() },
        Layer::Conv(c) => LayerDesc::Conv {
            in_depth: c.in_depth,
            depth: c.depth,
            kernel: c.kernel,
            padding: c.padding,
        },
        Layer::Relu => LayerDesc::Relu,
        Layer::MaxPool => LayerDesc::Maxpool,
        Layer::Dropout { keep_prob } => LayerDesc::Dropout {
            keep_prob: *keep_prob,
        },
        Layer::Dense(d) => LayerDesc::Dense {
            inputs: d.inputs,
            outputs: d.outputs,
            activation: d.activation,
        },
    }
}

fn write_tensor<W: Write>(w: &mut W, shape: &[usize], values: &[f64]) -> Result<()> {
    binio::write_u32(w, shape.len() as u32)?;
    for &d in shape {
        binio::write_u32(w, d as u32)?;
    }
    for &v in values {
        binio::write_f32(w, v as f32)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, expected: &[usize]) -> Result<Vec<f64>> {
    let rank = binio::read_u32(r)?;
    if rank > MAX_RANK {
        return Err(Error::format(format!("tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(binio::read_u32(r)? as usize);
    }
    if shape != expected {
        return Err(Error::format(format!(
            "tensor shape {shape:?}, descriptor implies {expected:?}"
        )));
    }
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = binio::read_f32(r)? as f64;
        if !v.is_finite() {
            return Err(Error::format("non-finite parameter"));
        }
        out.push(v);
    }
    Ok(out)
}

/// Writes `net` with caller metadata embedded in the descriptor.
pub fn write_model<W: Write>(w: &mut W, net: &Network, meta: &serde_json::Value) -> Result<()> {
    let desc = Descriptor {
        input: net.input,
        layers: net.layers.iter().map(describe).collect(),
        meta: meta.clone(),
    };
    w.write_all(MAGIC)?;
    binio::write_u16(w, VERSION)?;
    binio::write_prefixed_str(w, &serde_json::to_string(&desc)?)?;
    for l in &net.layers {
        match l {
            Layer::Standardize { mean, scale } => {
                write_tensor(w, &[mean.len()], mean)?;
                write_tensor(w, &[scale.len()], scale)?;
            }
            Layer::Conv(c) => {
                write_tensor(w, &[c.depth, c.in_depth, c.kernel, c.kernel], &c.weights)?;
                write_tensor(w, &[c.depth], &c.bias)?;
            }
            Layer::Dense(d) => {
                write_tensor(w, &[d.outputs, d.inputs], &d.weights)?;
                write_tensor(w, &[d.outputs], &d.bias)?;
            }
            Layer::Relu | Layer::MaxPool | Layer::Dropout { .. } => {}
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<(Network, serde_json::Value)> {
    binio::expect_magic(r, MAGIC)?;
    let version = binio::read_u16(r)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "model version {version}, this build reads {VERSION}"
        )));
    }
    let desc: Descriptor = serde_json::from_str(&binio::read_prefixed_str(r, DESCRIPTOR_LIMIT)?)
        .map_err(|e| Error::format(format!("model descriptor: {e}")))?;
    let mut layers = Vec::with_capacity(desc.layers.len());
    for d in desc.layers {
        layers.push(match d {
            LayerDesc::Standardize { len } => Layer::Standardize {
                mean: read_tensor(r, &[len])?,
                scale: read_tensor(r, &[len])?,
            },
            LayerDesc::Conv {
                in_depth,
                depth,
                kernel,
                padding,
            } => {
                let mut c = ConvLayer::zeros(in_depth, depth, kernel, padding);
                c.weights = read_tensor(r, &[depth, in_depth, kernel, kernel])?;
                c.bias = read_tensor(r, &[depth])?;
                Layer::Conv(c)
            }
            LayerDesc::Relu => Layer::Relu,
            LayerDesc::Maxpool => Layer::MaxPool,
            LayerDesc::Dropout { keep_prob } => Layer::Dropout { keep_prob },
            LayerDesc::Dense {
                inputs,
                outputs,
                activation,
            } => {
                let mut d = DenseLayer::zeros(inputs, outputs, activation);
                d.weights = read_tensor(r, &[outputs, inputs])?;
                d.bias = read_tensor(r, &[outputs])?;
                Layer::Dense(d)
            }
        });
    }
    let net = Network::new(desc.input, layers).map_err(|e| Error::format(e.to_string()))?;
    Ok((net, desc.meta))
}

/// Rounds every stored value to `f32`, matching what a saved model holds.
pub fn round_to_f32(net: &mut Network) {
    for l in &mut net.layers {
        if let Layer::Standardize { mean, scale } = l {
            mean.iter_mut()
                .chain(scale.iter_mut())
                .for_each(|v| *v = *v as f32 as f64);
        }
    }
    for p in net.params_mut() {
        p.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}
