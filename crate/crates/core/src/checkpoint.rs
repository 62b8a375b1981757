//! Weight checkpoints.
//!
//! Layout: `H4VDMCKP`, a little-endian `u32` header length, the JSON header, every
//! tensor as little-endian `f32` in header order, then a CRC-32 of all preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gop_store::ScalingConventions;
use crate::model::{H4vdm, ModelConfig, ModelError};
use crate::nn::{Mat, Params, Scalar};

pub const MAGIC: &[u8; 8] = b"H4VDMCKP";
pub const FORMAT_VERSION: u32 = 1;
pub const POOLING: &str = "flatten";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub pooling: String,
    pub scaling: ScalingConventions,
    pub seed: u64,
    pub epoch: Option<usize>,
    /// Decision threshold on the similarity score, when one has been selected.
    pub threshold: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

/// Run metadata stored next to the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: Option<usize>,
    pub threshold: Option<f64>,
}

pub fn header_for<T: Scalar>(model: &H4vdm<T>, meta: CheckpointMeta) -> CheckpointHeader {
    CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        pooling: POOLING.to_string(),
        scaling: ScalingConventions::default(),
        seed: meta.seed,
        epoch: meta.epoch,
        threshold: meta.threshold,
        tensors: model
            .named_params()
            .into_iter()
            .map(|(name, m)| TensorEntry {
                name,
                shape: [m.rows(), m.cols()],
            })
            .collect(),
    }
}

pub fn to_bytes<T: Scalar>(model: &H4vdm<T>, meta: CheckpointMeta) -> Vec<u8> {
    let header = serde_json::to_vec(&header_for(model, meta)).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 4 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, m) in model.named_params() {
        for &v in m.data() {
            let v = v.to_f32().expect("finite weight");
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(H4vdm<T>, CheckpointHeader), CheckpointError> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let hend = 12usize
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| CheckpointError::Corrupt("header length past end of file".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&body[12..hend]).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Corrupt(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    if header.pooling != POOLING {
        return Err(CheckpointError::Corrupt(format!("unsupported pooling {:?}", header.pooling)));
    }
    let mut model = H4vdm::<T>::zeros(&header.config)?;
    let expected = header_for(&model, CheckpointMeta::default()).tensors;
    if expected != header.tensors {
        return Err(CheckpointError::Corrupt("tensor list does not match the configuration".into()));
    }
    let mut data = &body[hend..];
    for m in model.params_mut() {
        let n = m.len();
        if data.len() < 4 * n {
            return Err(CheckpointError::Corrupt("truncated tensor data".into()));
        }
        let values: Vec<T> = data[..4 * n]
            .chunks_exact(4)
            .map(|c| T::c(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        *m = Mat::from_vec(m.rows(), m.cols(), values).expect("shape checked");
        data = &data[4 * n..];
    }
    if !data.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", data.len())));
    }
    Ok((model, header))
}

pub fn save<T: Scalar>(path: &Path, model: &H4vdm<T>, meta: CheckpointMeta) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model, meta)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<(H4vdm<T>, CheckpointHeader), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

/// Human-readable summary written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub config: ModelConfig,
    pub pooling: String,
    pub scaling: ScalingConventions,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub threshold: Option<f64>,
    pub total_params: usize,
    pub param_breakdown: Vec<(String, usize)>,
}

pub fn model_card(header: &CheckpointHeader) -> ModelCard {
    ModelCard {
        config: header.config.clone(),
        pooling: header.pooling.clone(),
        scaling: header.scaling.clone(),
        seed: header.seed,
        epoch: header.epoch,
        threshold: header.threshold,
        total_params: header.config.param_count(),
        param_breakdown: header.config.param_breakdown(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        let mut c = ModelConfig::tiny();
        c.height = 32;
        c.width = 32;
        c.gop_len = 2;
        c
    }

    #[test]
    fn roundtrip_is_exact_for_f32() {
        let m = H4vdm::<f32>::init(&cfg(), 4).unwrap();
        let meta = CheckpointMeta {
            seed: 4,
            epoch: Some(3),
            threshold: Some(0.61),
        };
        let bytes = to_bytes(&m, meta);
        let (back, header) = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.threshold, Some(0.61));
        assert_eq!(to_bytes(&back, meta), bytes);
    }

    #[test]
    fn corruption_detected() {
        let m = H4vdm::<f32>::init(&cfg(), 1).unwrap();
        let mut bytes = to_bytes(&m, CheckpointMeta::default());
        let k = bytes.len() / 2;
        bytes[k] ^= 1;
        assert!(matches!(
            from_bytes::<f32>(&bytes),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
        assert!(matches!(from_bytes::<f32>(b"nonsense"), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn card_counts_match_tensors() {
        let m = H4vdm::<f32>::init(&cfg(), 1).unwrap();
        let card = model_card(&header_for(&m, CheckpointMeta::default()));
        assert_eq!(card.total_params, m.num_params());
    }
}
