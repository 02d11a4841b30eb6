use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, TrainError};
use crate::datagen::Dataset;

/// SHA-256 over a length-prefixed canonical encoding of every pair
/// (trajectory, label, extents, sampling and pixels), hex encoded.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut body = Sha256::new();
    let mut len = 0u64;
    let mut feed = |bytes: &[u8]| {
        len += bytes.len() as u64;
        body.update(bytes);
    };
    for p in &ds.pairs {
        feed(&(p.trajectory.len() as u64).to_le_bytes());
        feed(p.trajectory.as_bytes());
        feed(&p.label.to_le_bytes());
        for b in [&p.prev, &p.cur] {
            feed(&(b.samples as u64).to_le_bytes());
            feed(&(b.width as u64).to_le_bytes());
            for v in [b.dt, b.trace_spacing, b.origin] {
                feed(&v.to_le_bytes());
            }
            for v in &b.data {
                feed(&v.to_le_bytes());
            }
        }
    }
    let inner = body.finalize();
    let mut outer = Sha256::new();
    outer.update(format!("dataset {len}\0").as_bytes());
    outer.update(inner);
    outer.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Echo of what produced a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub created: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    pub threads: usize,
}

impl RunMetadata {
    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let body = serde_json::to_string_pretty(self).map_err(|e| io_err(path, e))?;
        std::fs::write(path, body).map_err(|e| io_err(path, e))
    }
}
