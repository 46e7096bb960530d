//! Checkpoint container and its on-disk format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LMCK" | version u32 | meta_len u32 | meta JSON (UTF-8, meta_len bytes)
//!        | P x f32 params | for each BN layer: mean[f] f32, var[f] f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{BnStats, Network};
use super::spec::ModelSpec;
use super::ParamVector;
use crate::error::{LmcError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training provenance. Together with the dataset files these fields
/// re-derive the run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub init_seed: u64,
    pub noise_seed: u64,
    pub subset: String,
    pub epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dataset_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub bn_stats: Vec<BnStats>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        Network::new(&self.spec)
    }

    /// Checks the container invariants against the spec.
    pub fn validate(&self) -> Result<()> {
        let net = self.network()?;
        if self.params.len() != net.param_count() {
            return Err(LmcError::Shape(format!(
                "checkpoint holds {} parameters, spec implies {}",
                self.params.len(),
                net.param_count()
            )));
        }
        if self.bn_stats.len() != net.bn_features().len() {
            return Err(LmcError::Shape(format!(
                "{} BN stat sets for {} BN layers",
                self.bn_stats.len(),
                net.bn_features().len()
            )));
        }
        for (i, (stats, &f)) in self.bn_stats.iter().zip(net.bn_features()).enumerate() {
            if stats.mean.len() != f || stats.var.len() != f {
                return Err(LmcError::Shape(format!(
                    "BN layer {i} stats do not have {f} features"
                )));
            }
            if stats.var.iter().any(|&v| !(v > 0.0)) {
                return Err(LmcError::Shape(format!(
                    "BN layer {i} has a non-positive running variance"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    meta: CheckpointMeta,
    param_count: usize,
    bn_features: Vec<usize>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let header = Header {
        spec: ckpt.spec.clone(),
        meta: ckpt.meta.clone(),
        param_count: ckpt.params.len(),
        bn_features: ckpt.bn_stats.iter().map(|s| s.mean.len()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let stat_len: usize = header.bn_features.iter().map(|f| 2 * f).sum();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * (ckpt.params.len() + stat_len));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &ckpt.params.0 {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &ckpt.bn_stats {
        for v in s.mean.iter().chain(&s.var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let fail = |m: String| LmcError::Format(m);
    if bytes.len() < 12 {
        return Err(fail(format!(
            "file has {} bytes, header needs 12",
            bytes.len()
        )));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < meta_len {
        return Err(fail("metadata truncated".into()));
    }
    let header: Header = serde_json::from_slice(&body[..meta_len])?;
    let net = Network::new(&header.spec)?;
    if header.param_count != net.param_count() || header.bn_features != net.bn_features() {
        return Err(fail("header disagrees with spec-derived layout".into()));
    }
    let floats = &body[meta_len..];
    let stat_len: usize = header.bn_features.iter().map(|f| 2 * f).sum();
    let expected = 4 * (header.param_count + stat_len);
    if floats.len() != expected {
        return Err(fail(format!(
            "payload has {} bytes, expected {expected}",
            floats.len()
        )));
    }
    let mut values = floats
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let params: Vec<f32> = values.by_ref().take(header.param_count).collect();
    let mut bn_stats = Vec::with_capacity(header.bn_features.len());
    for &f in &header.bn_features {
        let mean: Vec<f32> = values.by_ref().take(f).collect();
        let var: Vec<f32> = values.by_ref().take(f).collect();
        bn_stats.push(BnStats { mean, var });
    }
    let ckpt = Checkpoint {
        spec: header.spec,
        params: ParamVector(params),
        bn_stats,
        meta: header.meta,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_model;

    #[test]
    fn header_fields_are_little_endian() {
        let spec = ModelSpec::mlp(3, &[2], 2).with_batch_norm(&[true]);
        let ckpt = init_model(&spec, 1).unwrap();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        assert_eq!(&bytes[..4], b"LMCK");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let p = ckpt.params.len();
        assert_eq!(bytes.len(), 12 + meta_len + 4 * (p + 2 * 2));
        let first = f32::from_le_bytes(bytes[12 + meta_len..16 + meta_len].try_into().unwrap());
        assert_eq!(first.to_bits(), ckpt.params.0[0].to_bits());
        // trailing BN arrays: mean zeros then var ones
        let tail: Vec<f32> = bytes[bytes.len() - 16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(tail, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_corruption() {
        let ckpt = init_model(&ModelSpec::mlp(3, &[2], 2), 1).unwrap();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_checkpoint(&bad).is_err());
    }
}
