//! Raw little-endian tensor files with JSON sidecars.
//!
//! A tensor `name` is stored as `<dir>/<name>.bin` (packed little-endian
//! values) next to `<dir>/<name>.json` holding `{name, shape, dtype}`.
//! Readers accept `f64` and `f32` payloads (the latter widened on load);
//! writers emit `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockWeights, Mat, ModelConfig};
use crate::tensor::TokenTensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor shape must have at least one dimension"));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape("tensor shape product overflows"))
}

/// Decodes a sidecar + payload pair. This is the untrusted-input entry
/// point; it never panics on malformed bytes.
pub fn decode_tensor(sidecar_json: &[u8], payload: &[u8]) -> Result<(TensorSidecar, Vec<f64>)> {
    let sidecar: TensorSidecar = serde_json::from_slice(sidecar_json)?;
    let count = element_count(&sidecar.shape)?;
    let data = match sidecar.dtype.as_str() {
        "f64" => {
            let expected = count
                .checked_mul(8)
                .ok_or_else(|| Error::shape("tensor byte length overflows"))?;
            if payload.len() != expected {
                return Err(Error::shape(format!(
                    "payload is {} bytes, shape needs {expected}",
                    payload.len()
                )));
            }
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
                .collect()
        }
        "f32" => {
            let expected = count
                .checked_mul(4)
                .ok_or_else(|| Error::shape("tensor byte length overflows"))?;
            if payload.len() != expected {
                return Err(Error::shape(format!(
                    "payload is {} bytes, shape needs {expected}",
                    payload.len()
                )));
            }
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk is 4 bytes")) as f64)
                .collect()
        }
        other => {
            return Err(Error::shape(format!("unsupported dtype '{other}'")));
        }
    };
    Ok((sidecar, data))
}

pub fn encode_payload(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty()
        || name.contains(['/', '\\'])
        || name.contains("..")
        || name.starts_with('.')
    {
        return Err(Error::config(format!("invalid tensor name '{name}'")));
    }
    Ok(())
}

pub fn save_tensor(dir: &Path, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    check_name(name)?;
    let count = element_count(shape)?;
    if count != data.len() {
        return Err(Error::shape(format!(
            "tensor '{name}' has {} values for shape {shape:?}",
            data.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let sidecar = TensorSidecar {
        name: name.to_string(),
        shape: shape.to_vec(),
        dtype: "f64".to_string(),
    };
    fs::write(dir.join(format!("{name}.json")), serde_json::to_vec_pretty(&sidecar)?)?;
    fs::write(dir.join(format!("{name}.bin")), encode_payload(data))?;
    Ok(())
}

pub fn load_tensor(dir: &Path, name: &str) -> Result<(TensorSidecar, Vec<f64>)> {
    check_name(name)?;
    let sidecar_bytes = fs::read(dir.join(format!("{name}.json")))?;
    let payload = fs::read(dir.join(format!("{name}.bin")))?;
    decode_tensor(&sidecar_bytes, &payload)
}

pub fn save_token_tensor(dir: &Path, name: &str, t: &TokenTensor) -> Result<()> {
    save_tensor(dir, name, &[t.batch(), t.tokens(), t.channels()], t.data())
}

pub fn load_token_tensor(dir: &Path, name: &str) -> Result<TokenTensor> {
    let (sidecar, data) = load_tensor(dir, name)?;
    if sidecar.shape.len() != 3 {
        return Err(Error::shape(format!(
            "tensor '{name}' has shape {:?}, expected batch x tokens x channels",
            sidecar.shape
        )));
    }
    TokenTensor::from_vec(sidecar.shape[0], sidecar.shape[1], sidecar.shape[2], data)
}

fn block_tensor_names(i: usize) -> [String; 7] {
    [
        format!("block{i:03}_in_proj"),
        format!("block{i:03}_gate_proj"),
        format!("block{i:03}_delta_proj"),
        format!("block{i:03}_delta_bias"),
        format!("block{i:03}_b_proj"),
        format!("block{i:03}_c_proj"),
        format!("block{i:03}_out_proj"),
    ]
}

pub fn save_weights(dir: &Path, weights: &[BlockWeights]) -> Result<()> {
    for (i, w) in weights.iter().enumerate() {
        let names = block_tensor_names(i);
        save_tensor(dir, &names[0], &[w.in_proj.rows(), w.in_proj.cols()], w.in_proj.data())?;
        save_tensor(dir, &names[1], &[w.gate_proj.rows(), w.gate_proj.cols()], w.gate_proj.data())?;
        save_tensor(dir, &names[2], &[w.delta_proj.len()], &w.delta_proj)?;
        save_tensor(dir, &names[3], &[1], &[w.delta_bias])?;
        save_tensor(dir, &names[4], &[w.b_proj.rows(), w.b_proj.cols()], w.b_proj.data())?;
        save_tensor(dir, &names[5], &[w.c_proj.rows(), w.c_proj.cols()], w.c_proj.data())?;
        save_tensor(dir, &names[6], &[w.out_proj.rows(), w.out_proj.cols()], w.out_proj.data())?;
    }
    Ok(())
}

fn load_mat(dir: &Path, name: &str, rows: usize, cols: usize) -> Result<Mat> {
    let (sidecar, data) = load_tensor(dir, name)?;
    if sidecar.shape != [rows, cols] {
        return Err(Error::shape(format!(
            "tensor '{name}' has shape {:?}, expected [{rows}, {cols}]",
            sidecar.shape
        )));
    }
    Mat::from_vec(rows, cols, data)
}

pub fn load_weights(dir: &Path, cfg: &ModelConfig) -> Result<Vec<BlockWeights>> {
    let (d, dp, n) = (cfg.embed_dim, cfg.inner_dim, cfg.state_dim);
    (0..cfg.depth)
        .map(|i| {
            let names = block_tensor_names(i);
            let (sc, delta_proj) = load_tensor(dir, &names[2])?;
            if sc.shape != [dp] {
                return Err(Error::shape(format!(
                    "tensor '{}' has shape {:?}, expected [{dp}]",
                    names[2], sc.shape
                )));
            }
            let (_, bias) = load_tensor(dir, &names[3])?;
            Ok(BlockWeights {
                in_proj: load_mat(dir, &names[0], d, dp)?,
                gate_proj: load_mat(dir, &names[1], d, dp)?,
                delta_proj,
                delta_bias: bias[0],
                b_proj: load_mat(dir, &names[4], dp, n)?,
                c_proj: load_mat(dir, &names[5], dp, n)?,
                out_proj: load_mat(dir, &names[6], dp, d)?,
            })
        })
        .collect()
}
