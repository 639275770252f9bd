//! Self-describing, checksummed flow checkpoints.
//!
//! Floating-point data is stored as raw IEEE-754 bits (coordinates as a hex
//! string of little-endian bytes) so restore is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{DiagnosticRow, Flow, FlowConfig, Trackers};

pub const SCHEMA: &str = "tension-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    pub time_bits: u64,
    pub nodes: usize,
    pub ambient_dim: usize,
    pub coords: String,
    pub trackers: Vec<u64>,
    pub rows: Vec<Vec<u64>>,
    pub checksum: String,
}

fn digest(c: &Checkpoint) -> String {
    let mut copy = c.clone();
    copy.checksum.clear();
    let payload = serde_json::to_vec(&copy).expect("checkpoint serializes");
    hex::encode(Sha256::digest(&payload))
}

impl Checkpoint {
    pub fn capture(flow: &Flow) -> Self {
        let s = flow.state();
        let bytes: Vec<u8> = s.map.coords().iter().flat_map(|c| c.to_le_bytes()).collect();
        let mut c = Checkpoint {
            schema: SCHEMA.to_string(),
            config_hash: flow.config().config_hash.clone(),
            seed: flow.config().seed,
            step: s.step,
            time_bits: s.time.to_bits(),
            nodes: s.map.mesh().len(),
            ambient_dim: s.map.ambient_dim(),
            coords: hex::encode(bytes),
            trackers: s.trackers.to_bits(),
            rows: flow.rows().iter().map(|r| r.to_bits()).collect(),
            checksum: String::new(),
        };
        c.checksum = digest(&c);
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed: {e}")))?;
        if c.schema != SCHEMA {
            return Err(Error::Checkpoint(format!("schema mismatch: expected {SCHEMA}, found {}", c.schema)));
        }
        if digest(&c) != c.checksum {
            return Err(Error::Checkpoint("checksum mismatch (corrupted payload)".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the flow. The config must hash to the recorded value.
    pub fn restore(&self, config: FlowConfig) -> Result<Flow> {
        if config.config_hash != self.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {}, config {}",
                self.config_hash, config.config_hash
            )));
        }
        let g = &config.initial;
        if g.mesh().len() != self.nodes || g.ambient_dim() != self.ambient_dim {
            return Err(Error::Checkpoint("mesh or target shape differs".into()));
        }
        let bytes = hex::decode(&self.coords).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if bytes.len() != 8 * self.nodes * self.ambient_dim {
            return Err(Error::Checkpoint("coordinate payload has the wrong length".into()));
        }
        let coords: Vec<f64> =
            bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        if self.trackers.len() != Trackers::FIELDS {
            return Err(Error::Checkpoint("tracker block has the wrong length".into()));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| DiagnosticRow::from_bits(r))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Checkpoint("malformed diagnostic row".into()))?;
        let map = g.with_coords(coords)?;
        Flow::resume(config, map, f64::from_bits(self.time_bits), self.step, Trackers::from_bits(&self.trackers), rows)
    }
}
