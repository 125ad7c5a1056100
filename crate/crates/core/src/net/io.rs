//! Binary model file.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SPLAE1"            6 bytes
//! format version      u32
//! layer count L       u32
//! widths              (L + 1) × u32
//! activation ids      L × u8
//! input scale         f64
//! per layer           weights (out × in, row-major) f64, then bias (out) f64
//! crc32               u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{check_dims, Activation, AeModel, Dense};
use crate::error::{Result, SimError};
use crate::format::Reader;

pub const MODEL_MAGIC: &[u8; 6] = b"SPLAE1";
const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &AeModel) -> Vec<u8> {
    let dims = model.dims();
    let mut buf = Vec::with_capacity(64 + 8 * model.n_params());
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for l in &model.layers {
        buf.push(l.activation.id());
    }
    buf.extend_from_slice(&model.input_scale.to_le_bytes());
    for l in &model.layers {
        for v in l.weights.iter().chain(l.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<AeModel> {
    let body = crate::format::split_checked(bytes, MODEL_MAGIC)?;
    let mut r = Reader::new(&body[MODEL_MAGIC.len()..]);
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(SimError::format(format!(
            "unsupported model version {version}"
        )));
    }
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(SimError::format(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let dims = (0..=n_layers)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    check_dims(&dims)?;
    let acts = (0..n_layers)
        .map(|_| {
            let id = r.u8()?;
            Activation::from_id(id)
                .ok_or_else(|| SimError::format(format!("unknown activation id {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let input_scale = r.f64()?;
    if !(input_scale.is_finite() && input_scale > 0.0) {
        return Err(SimError::format(format!("bad input scale {input_scale}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let w = r.f64_vec(fan_in * fan_out)?;
        let b = r.f64_vec(fan_out)?;
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(SimError::format(format!(
                "non-finite parameter in layer {l}"
            )));
        }
        layers.push(Dense {
            weights: Array2::from_shape_vec((fan_out, fan_in), w).expect("sized above"),
            bias: Array1::from(b),
            activation: acts[l],
        });
    }
    r.finish()?;
    Ok(AeModel {
        layers,
        input_scale,
    })
}

pub fn save_model(model: &AeModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AeModel> {
    decode_model(&fs::read(path)?)
}

/// Loads a model and checks that it maps `n_bins`-wide vectors.
pub fn load_model_for_bins(path: &Path, n_bins: usize) -> Result<AeModel> {
    let m = load_model(path)?;
    if m.input_dim() != n_bins {
        return Err(SimError::format(format!(
            "model expects {} bins, grid has {n_bins}",
            m.input_dim()
        )));
    }
    Ok(m)
}
