//! Model checkpoints, schema `qcqp-gnn-ckpt-v1`: a single JSON header line
//! carrying the configuration and provenance, followed by the raw parameter
//! blob as little-endian 64-bit floats in canonical flat order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, GnnConfig, GnnError, GnnParams};

pub const CHECKPOINT_SCHEMA: &str = "qcqp-gnn-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    config: GnnConfig,
    seed: u64,
    epoch: usize,
    param_count: usize,
}

pub fn save_checkpoint(
    path: &Path,
    params: &GnnParams,
    meta: &CheckpointMeta,
) -> Result<(), GnnError> {
    params.audit()?;
    let header = Header {
        schema: CHECKPOINT_SCHEMA.to_string(),
        config: params.config,
        seed: meta.seed,
        epoch: meta.epoch,
        param_count: params.param_count(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)
        .map_err(|e| GnnError::Checkpoint(e.to_string()))?;
    out.write_all(b"\n")?;
    let flat = params.to_flat();
    let mut blob = Vec::with_capacity(flat.len() * 8);
    for value in &flat {
        blob.extend_from_slice(&value.to_le_bytes());
    }
    out.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(GnnParams, CheckpointMeta), GnnError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let read = reader.read(&mut byte)?;
        if read == 0 {
            return Err(GnnError::Checkpoint("missing header terminator".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| GnnError::Checkpoint(format!("bad header: {e}")))?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(GnnError::Checkpoint(format!(
            "unknown schema {:?}",
            header.schema
        )));
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    if blob.len() != header.param_count * 8 {
        return Err(GnnError::Checkpoint(format!(
            "blob holds {} bytes, expected {}",
            blob.len(),
            header.param_count * 8
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    let mut params = init_params(&header.config, 0);
    if params.param_count() != header.param_count {
        return Err(GnnError::Checkpoint(format!(
            "config implies {} parameters, header says {}",
            params.param_count(),
            header.param_count
        )));
    }
    params.load_flat(&flat)?;
    params.audit()?;
    Ok((
        params,
        CheckpointMeta {
            seed: header.seed,
            epoch: header.epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{OutputMode, Task};

    #[test]
    fn checkpoint_round_trip() {
        let cfg = GnnConfig::new(2, 5, OutputMode::GraphScalar, Task::Objective);
        let params = init_params(&cfg, 99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let meta = CheckpointMeta { seed: 99, epoch: 7 };
        save_checkpoint(&path, &params, &meta).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.to_flat(), params.to_flat());
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.config, cfg);
    }

    #[test]
    fn corrupt_blob_is_rejected() {
        let cfg = GnnConfig::new(1, 3, OutputMode::GraphScalar, Task::Objective);
        let params = init_params(&cfg, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &CheckpointMeta { seed: 1, epoch: 0 }).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
