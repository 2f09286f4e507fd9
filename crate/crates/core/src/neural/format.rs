//! `TWNN` weight files.
//!
//! Layout (little-endian): magic `TWNN`, version u32, layer count u32, then
//! per layer a kind tag u8 followed by its shape and row-major f64 data:
//!
//! | tag | layer      | body                                                  |
//! |-----|------------|-------------------------------------------------------|
//! | 1   | dense      | out u32, in u32, activation u8, W[out·in], b[out]     |
//! | 2   | layer norm | dim u32, eps f64, gain[dim], bias[dim]                |
//! | 3   | dropout    | rate f64                                              |
//! | 4   | Bi-GRU     | input u32, hidden u32, forward cell, backward cell    |
//!
//! A GRU cell is `W_xr, W_hr, b_r, W_xz, W_hz, b_z, W_xh, W_hh, b_h`.

use ndarray::{Array1, Array2};

use super::{Activation, BiGruLayer, DenseLayer, Dropout, GruCell, Layer, LayerNorm, Network};
use crate::binio::{put_f64s, put_u32, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TWNN";
const VERSION: u32 = 1;
const WHAT: &str = "weights file";

const TAG_DENSE: u8 = 1;
const TAG_NORM: u8 = 2;
const TAG_DROPOUT: u8 = 3;
const TAG_BIGRU: u8 = 4;

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, net.layers().len() as u32);
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                put_u32(&mut out, d.outputs() as u32);
                put_u32(&mut out, d.inputs() as u32);
                out.push(d.activation.tag());
            }
            Layer::LayerNorm(n) => {
                out.push(TAG_NORM);
                put_u32(&mut out, n.dim() as u32);
                put_f64s(&mut out, &[n.eps]);
            }
            Layer::Dropout(d) => {
                out.push(TAG_DROPOUT);
                put_f64s(&mut out, &[d.rate]);
            }
            Layer::BiGru(g) => {
                out.push(TAG_BIGRU);
                put_u32(&mut out, g.input_size() as u32);
                put_u32(&mut out, g.hidden_size() as u32);
            }
        }
        for p in layer.params() {
            put_f64s(&mut out, p);
        }
    }
    out
}

fn matrix(r: &mut Reader, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(WHAT, "matrix size overflows"))?;
    let data = r.f64s(n)?;
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::format(WHAT, format!("non-finite parameter {v}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("size checked"))
}

fn vector(r: &mut Reader, len: usize) -> Result<Array1<f64>> {
    Ok(matrix(r, 1, len)?.into_shape_with_order(len).expect("row"))
}

fn cell(r: &mut Reader, input: usize, hidden: usize) -> Result<GruCell> {
    Ok(GruCell {
        w_xr: matrix(r, hidden, input)?,
        w_hr: matrix(r, hidden, hidden)?,
        b_r: vector(r, hidden)?,
        w_xz: matrix(r, hidden, input)?,
        w_hz: matrix(r, hidden, hidden)?,
        b_z: vector(r, hidden)?,
        w_xh: matrix(r, hidden, input)?,
        w_hh: matrix(r, hidden, hidden)?,
        b_h: vector(r, hidden)?,
    })
}

fn dim(r: &mut Reader) -> Result<usize> {
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(Error::format(WHAT, "zero dimension"));
    }
    Ok(d)
}

/// Parses a weights file into a network taking `input_width` features.
pub fn decode_network(bytes: &[u8], input_width: usize) -> Result<Network> {
    let mut r = Reader::new(bytes, WHAT);
    if r.take(4)? != MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    for i in 0..count {
        let layer = match r.u8()? {
            TAG_DENSE => {
                let out = dim(&mut r)?;
                let inp = dim(&mut r)?;
                let act = Activation::from_tag(r.u8()?)
                    .ok_or_else(|| Error::format(WHAT, "unknown activation"))?;
                Layer::Dense(DenseLayer::from_parts(matrix(&mut r, out, inp)?, vector(&mut r, out)?, act)?)
            }
            TAG_NORM => {
                let d = dim(&mut r)?;
                let eps = r.f64()?;
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(Error::format(WHAT, "layer norm eps must be positive"));
                }
                Layer::LayerNorm(LayerNorm {
                    gain: vector(&mut r, d)?,
                    bias: vector(&mut r, d)?,
                    eps,
                })
            }
            TAG_DROPOUT => Layer::Dropout(
                Dropout::new(r.f64()?).map_err(|e| Error::format(WHAT, e.to_string()))?,
            ),
            TAG_BIGRU => {
                let inp = dim(&mut r)?;
                let hidden = dim(&mut r)?;
                Layer::BiGru(BiGruLayer {
                    forward_cell: cell(&mut r, inp, hidden)?,
                    backward_cell: cell(&mut r, inp, hidden)?,
                })
            }
            tag => return Err(Error::format(WHAT, format!("unknown layer tag {tag} at layer {i}"))),
        };
        layers.push(layer);
    }
    r.finish()?;
    Network::new(input_width, layers).map_err(|e| Error::format(WHAT, e.to_string()))
}

impl Network {
    /// Decodes weights and checks them against an expected architecture.
    pub fn decode_expecting(
        bytes: &[u8],
        input_width: usize,
        expected: &[super::LayerSpec],
    ) -> Result<Network> {
        let net = decode_network(bytes, input_width)?;
        if net.architecture() != expected {
            return Err(Error::format(
                WHAT,
                format!(
                    "architecture mismatch: file has {:?}, expected {:?}",
                    net.architecture(),
                    expected
                ),
            ));
        }
        Ok(net)
    }
}
