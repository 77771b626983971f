//! Checkpoint file: one UTF-8 JSON header line (config, tensor manifest,
//! SHA-256 of the payload), a newline, then every tensor as raw
//! little-endian float32 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::autograd::DiffTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT: &str = "tumorseg-checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 5],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    manifest: Vec<ManifestEntry>,
    digest: String,
}

pub(crate) fn encode<S: Scalar>(model: &Model<S>) -> Vec<u8> {
    let payload: Vec<u8> = model
        .params()
        .iter()
        .flat_map(|p| p.tensor.value().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)))
        .flat_map(f32::to_le_bytes)
        .collect();
    let header = Header {
        format: FORMAT.into(),
        config: model.config().clone(),
        manifest: model
            .params()
            .iter()
            .map(|p| ManifestEntry { name: p.name.clone(), shape: p.tensor.shape().0 })
            .collect(),
        digest: hex::encode(Sha256::digest(&payload)),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out
}

pub(crate) fn decode<S: Scalar>(bytes: &[u8]) -> Result<Model<S>> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    let payload = &bytes[nl + 1..];
    let mut model = Model::<S>::new(header.config.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.manifest.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, config implies {}",
            header.manifest.len(),
            model.params().len()
        )));
    }
    for (entry, p) in header.manifest.iter().zip(model.params()) {
        if entry.name != p.name || entry.shape != p.tensor.shape().0 {
            return Err(Error::Checkpoint(format!(
                "manifest entry {} {:?} does not match config tensor {} {}",
                entry.name,
                entry.shape,
                p.name,
                p.tensor.shape()
            )));
        }
    }
    let expected: usize = header.manifest.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!("payload is {} bytes, manifest requires {expected}", payload.len())));
    }
    if hex::encode(Sha256::digest(payload)) != header.digest {
        return Err(Error::Checkpoint("digest mismatch".into()));
    }
    let mut off = 0;
    for p in model.params_mut() {
        let n = p.tensor.shape().len();
        let vals = payload[off..off + 4 * n]
            .chunks_exact(4)
            .map(|c| S::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).expect("f32 converts"))
            .collect();
        off += 4 * n;
        p.tensor = DiffTensor::new(p.tensor.shape(), vals)?;
    }
    Ok(model)
}

pub fn save_checkpoint<S: Scalar>(model: &Model<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Model<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { widths: vec![2, 3, 4], bottleneck_width: 5, seed: 3, ..ModelConfig::default() }
    }

    #[test]
    fn round_trip_forward_is_bit_identical() {
        let m = Model::<f32>::new(small()).unwrap();
        let back: Model<f32> = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
        let p = m.config().patch_size;
        let input: Vec<f32> = (0..4 * p * p * p).map(|i| ((i * 7919) % 101) as f32 / 50.0 - 1.0).collect();
        let a = m.predict(&input, p).unwrap();
        let b = back.predict(&input, p).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let m = Model::<f32>::new(small()).unwrap();
        let mut bytes = encode(&m);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn flipped_payload_bit_fails_digest() {
        let m = Model::<f32>::new(small()).unwrap();
        let mut bytes = encode(&m);
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        let err = decode::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("digest"));
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let m = Model::<f32>::new(small()).unwrap();
        let bytes = encode(&m);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = std::str::from_utf8(&bytes[..nl]).unwrap().replace("\"classes\":4", "\"classes\":3");
        let mut tampered = header.into_bytes();
        tampered.extend_from_slice(&bytes[nl..]);
        let err = decode::<f32>(&tampered).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
