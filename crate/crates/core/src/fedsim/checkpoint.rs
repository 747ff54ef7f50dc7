//! Parameter checkpoints: a flat little-endian f64 file plus a JSON header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::{ScheduleSpec, ServerOptimizer};
use crate::error::{Error, Result};

pub const PARAMS_FILE: &str = "params.bin";
pub const HEADER_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub dimension: usize,
    /// Rounds completed.
    pub step: usize,
    pub schedule: ScheduleSpec,
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Server optimizer state, moments included.
    pub server: ServerOptimizer,
}

pub fn params_to_bytes(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Corrupt(format!("parameter file of {} bytes is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes `params.bin` and `checkpoint.json` into `dir`.
pub fn save_checkpoint(dir: &Path, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    if header.dimension != params.len() {
        return Err(Error::DimensionMismatch {
            expected: header.dimension,
            found: params.len(),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io_at(format!("creating {}", dir.display()), e))?;
    let p = dir.join(PARAMS_FILE);
    fs::write(&p, params_to_bytes(params)).map_err(|e| Error::io_at(format!("writing {}", p.display()), e))?;
    let h = dir.join(HEADER_FILE);
    let mut json = serde_json::to_vec_pretty(header)?;
    json.push(b'\n');
    fs::write(&h, json).map_err(|e| Error::io_at(format!("writing {}", h.display()), e))?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]; `path` may be the
/// directory or either of its two files.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let dir: PathBuf = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let h = dir.join(HEADER_FILE);
    let bytes = fs::read(&h).map_err(|e| Error::io_at(format!("reading {}", h.display()), e))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes)?;
    let p = dir.join(PARAMS_FILE);
    let bytes = fs::read(&p).map_err(|e| Error::io_at(format!("reading {}", p.display()), e))?;
    let params = params_from_bytes(&bytes)?;
    if params.len() != header.dimension {
        return Err(Error::DimensionMismatch {
            expected: header.dimension,
            found: params.len(),
        });
    }
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::optim::{ScheduleKind, ServerKind};

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let params = vec![0.1, -2.5e-300, f64::MAX, 0.0];
        let header = CheckpointHeader {
            dimension: 4,
            step: 7,
            schedule: ScheduleSpec::new(ScheduleKind::WarmupCosine, 0.01, 10),
            vocab_size: 2,
            seq_len: 9,
            server: ServerOptimizer::new(ServerKind::Adam, 4),
        };
        save_checkpoint(dir.path(), &header, &params).unwrap();
        assert_eq!(fs::read(dir.path().join(PARAMS_FILE)).unwrap().len(), 32);
        let (h, p) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(h, header);
        assert_eq!(p, params);
        assert!(load_checkpoint(&dir.path().join(PARAMS_FILE)).is_ok());
    }

    #[test]
    fn ragged_file_is_corrupt() {
        assert!(matches!(params_from_bytes(&[0; 9]), Err(Error::Corrupt(_))));
    }
}
