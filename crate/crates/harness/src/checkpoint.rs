//! Checkpoints: a JSON manifest plus one little-endian `f64` blob per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use fire_core::params::{Architecture, NetworkParams};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub run_id: String,
    pub seed: u64,
    /// Chunk the checkpoint belongs to.
    pub chunk: usize,
    /// `pre` (before reinitialization), `post`, or `final`.
    pub phase: String,
    /// Optimizer steps taken so far in the run.
    pub step: u64,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run_id: String,
    pub seed: u64,
    pub chunk: usize,
    pub phase: String,
    pub step: u64,
    pub params: NetworkParams,
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tensors = Vec::new();
    for (name, shape, data) in ckpt.params.named_tensors() {
        let file = format!("{name}.bin");
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        tensors.push(TensorEntry {
            name,
            shape,
            file,
            bytes: bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        run_id: ckpt.run_id.clone(),
        seed: ckpt.seed,
        chunk: ckpt.chunk,
        phase: ckpt.phase.clone(),
        step: ckpt.step,
        architecture: ckpt.params.arch.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| ckpt_err(&path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(ckpt_err(
            &path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let blob_path = dir.join(&t.file);
        let bytes = fs::read(&blob_path).map_err(io_err(&blob_path))?;
        let expected = t.shape.iter().product::<usize>() * 8;
        if bytes.len() as u64 != t.bytes || bytes.len() != expected {
            return Err(ckpt_err(
                &blob_path,
                format!(
                    "{} bytes on disk, manifest says {}, shape needs {expected}",
                    bytes.len(),
                    t.bytes
                ),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((t.name.clone(), t.shape.clone(), data));
    }
    let params = NetworkParams::from_named_tensors(manifest.architecture, &tensors)
        .map_err(|e| ckpt_err(&path, e.to_string()))?;
    Ok(Checkpoint {
        run_id: manifest.run_id,
        seed: manifest.seed,
        chunk: manifest.chunk,
        phase: manifest.phase,
        step: manifest.step,
        params,
    })
}

/// Directory for the checkpoint of `run_id` at `chunk`/`phase` under `root`.
pub fn checkpoint_dir(root: &Path, run_id: &str, chunk: usize, phase: &str) -> PathBuf {
    root.join("checkpoints")
        .join(run_id)
        .join(format!("chunk{chunk:03}-{phase}"))
}
