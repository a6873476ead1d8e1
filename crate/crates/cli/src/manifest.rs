//! Run manifest: everything about a run that is not numeric telemetry.
//! Timestamps and wall times live here so the CSVs stay byte-reproducible.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub method_label: String,
    pub pq_label: String,
    pub iterations: usize,
    pub epoch_budget: usize,
    pub trials: usize,
    pub trial_seeds: Vec<u64>,
    /// Test accuracy of each trial's trained dense reference network.
    pub reference_accuracy: Vec<f64>,
    pub output_files: Vec<String>,
    pub created_unix_ms: u64,
    pub wall_ms_per_trial: Vec<u64>,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> anyhow::Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
