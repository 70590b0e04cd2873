//! Policy checkpoint file.
//!
//! Little-endian layout:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"ACOT"`                         |
//! | 4      | 4    | format version, `u32` (currently 1)     |
//! | 8      | 8    | parameter count `n`, `u64`              |
//! | 16     | 8    | task fingerprint, `u64`                 |
//! | 24     | 8n   | parameters, `f64` each                  |

use std::path::Path;

use crate::env::{SyntheticTask, ToyPolicy};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ACOT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode(policy: &ToyPolicy, task: &SyntheticTask) -> Vec<u8> {
    let params = policy.params();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    out.extend_from_slice(&task.fingerprint().to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], task: &SyntheticTask) -> Result<ToyPolicy> {
    if bytes.len() < HEADER_LEN || bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a policy checkpoint".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u64_at(8) as usize;
    if task.fingerprint() != u64_at(16) {
        return Err(Error::Checkpoint(
            "checkpoint was trained on a different task".into(),
        ));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != count.saturating_mul(8) {
        return Err(Error::Checkpoint(format!(
            "header declares {count} parameters but body holds {} bytes",
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ToyPolicy::from_params(task, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, policy: &ToyPolicy, task: &SyntheticTask) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(policy, task)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>, task: &SyntheticTask) -> Result<ToyPolicy> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, task)
}
