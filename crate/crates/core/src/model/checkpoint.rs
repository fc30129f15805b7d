//! Binary checkpoints: magic, a length-prefixed JSON header, then raw
//! little-endian f64 data for the parameters and, optionally, Adam moments.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AdamState, CurvePoint, ModelConfig, ModelError, ModelParameters, TrainState};
use crate::SCHEMA_VERSION;

const MAGIC: &[u8; 8] = b"RVGCKPT\0";

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    config: ModelConfig,
    vocab_size: usize,
    step: u64,
    best_valid: Option<f64>,
    pending: (f64, u64),
    curve: Vec<CurvePoint>,
    tensors: Vec<(String, usize, usize)>,
    has_optimizer: bool,
}

/// What a checkpoint holds. Weights-only files load with zeroed Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub has_optimizer: bool,
}

fn write_tensor(out: &mut Vec<u8>, t: &Array2<f64>) {
    for v in t.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes `state`; with `with_optimizer = false` only the weights are kept
/// and a later resume restarts Adam from zero.
pub fn save_checkpoint(path: &Path, state: &TrainState, with_optimizer: bool) -> Result<(), ModelError> {
    let p = &state.params;
    let header = Header {
        schema_version: SCHEMA_VERSION,
        config: p.config.clone(),
        vocab_size: p.vocab_size,
        step: state.step,
        best_valid: state.best_valid,
        pending: state.pending,
        curve: state.curve.clone(),
        tensors: p.names.iter().zip(&p.tensors).map(|(n, t)| (n.clone(), t.nrows(), t.ncols())).collect(),
        has_optimizer: with_optimizer,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let groups = if with_optimizer { 3 } else { 1 };
    let mut out = Vec::with_capacity(16 + json.len() + 8 * groups * p.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &p.tensors {
        write_tensor(&mut out, t);
    }
    if with_optimizer {
        for t in state.adam.m.iter().chain(&state.adam.v) {
            write_tensor(&mut out, t);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| ModelError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(bad(&format!("schema version {} unsupported", header.schema_version)));
    }
    let mut at = 16 + hlen;
    let mut read = |rows: usize, cols: usize| -> Result<Array2<f64>, ModelError> {
        let n = rows * cols;
        let raw = bytes.get(at..at + 8 * n).ok_or_else(|| bad("truncated tensor data"))?;
        at += 8 * n;
        let vals = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Array2::from_shape_vec((rows, cols), vals).map_err(|e| bad(&e.to_string()))
    };
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (_, r, c) in &header.tensors {
        tensors.push(read(*r, *c)?);
    }
    let params = ModelParameters {
        config: header.config,
        vocab_size: header.vocab_size,
        names: header.tensors.iter().map(|(n, _, _)| n.clone()).collect(),
        tensors,
    };
    params.validate()?;
    let adam = if header.has_optimizer {
        let mut m = Vec::with_capacity(params.tensors.len());
        let mut v = Vec::with_capacity(params.tensors.len());
        for (_, r, c) in &header.tensors {
            m.push(read(*r, *c)?);
        }
        for (_, r, c) in &header.tensors {
            v.push(read(*r, *c)?);
        }
        AdamState { m, v }
    } else {
        AdamState::zeros(&params)
    };
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        state: TrainState {
            params,
            adam,
            step: header.step,
            best_valid: header.best_valid,
            pending: header.pending,
            curve: header.curve,
        },
        has_optimizer: header.has_optimizer,
    })
}

/// `step,train_loss,valid_loss`; the last column is empty without a
/// validation set.
pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<(), ModelError> {
    let mut s = String::from("step,train_loss,valid_loss\n");
    for p in curve {
        let v = p.valid_loss.map(|v| format!("{v:.6}")).unwrap_or_default();
        s.push_str(&format!("{},{:.6},{}\n", p.step, p.train_loss, v));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, s)?;
    Ok(())
}
