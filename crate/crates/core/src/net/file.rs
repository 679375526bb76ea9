//! Weight container: a little-endian `u64` header length, a JSON header, and
//! the raw little-endian `f32` tensor data in layout order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec, Network};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    target_name: String,
    higher_is_better: bool,
    label_mean: f64,
    label_std: f64,
    arch_fingerprint: String,
    spec: ModelSpec,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn metadata() -> serde_json::Value {
    serde_json::json!({
        "init": "he_normal_fan_in, zero biases",
        "dropout_placement": "inputs of both fully connected layers in each head",
        "weight_activation": "relu plus floor",
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let spec = model.spec();
    let tensors = spec
        .layout()
        .into_iter()
        .map(|t| TensorEntry {
            name: t.name,
            shape: t.shape,
            dtype: "f32".into(),
            byte_offset: t.offset * 4,
        })
        .collect();
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        target_name: model.target_name.clone(),
        higher_is_better: model.higher_is_better,
        label_mean: model.label_mean,
        label_std: model.label_std,
        arch_fingerprint: model.fingerprint(),
        spec: spec.clone(),
        metadata: metadata(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for v in model.network.params() {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(Error::InvalidInput(format!("implausible model header length {len}")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "model format version {} not supported",
            header.format_version
        )));
    }
    let expected = header.spec.fingerprint();
    if header.arch_fingerprint != expected {
        return Err(Error::FingerprintMismatch {
            found: header.arch_fingerprint,
            expected,
        });
    }
    if !(header.label_std > 0.0) {
        return Err(Error::InvalidInput(format!("label std {} must be positive", header.label_std)));
    }
    let layout = header.spec.layout();
    let consistent = layout.len() == header.tensors.len()
        && layout.iter().zip(&header.tensors).all(|(t, e)| {
            t.name == e.name && t.shape == e.shape && e.dtype == "f32" && e.byte_offset == t.offset * 4
        });
    if !consistent {
        return Err(Error::DimensionMismatch("tensor table does not match the model spec".into()));
    }
    let count = header.spec.parameter_count();
    let mut bytes = Vec::with_capacity(count * 4);
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(Error::DimensionMismatch(format!(
            "{} bytes of tensor data, expected {}",
            bytes.len(),
            count * 4
        )));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Model {
        network: Network::from_params(header.spec, params)?,
        label_mean: header.label_mean,
        label_std: header.label_std,
        target_name: header.target_name,
        higher_is_better: header.higher_is_better,
    })
}
