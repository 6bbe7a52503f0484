use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::LabError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub seed: u64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to reproduce a run and audit its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub fingerprint: String,
    pub artifact_version: String,
    pub subcommand: String,
    pub config: ExperimentConfig,
    pub noise_model: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunEntry>,
    pub outputs: Vec<OutputFile>,
    pub complete: bool,
    pub error: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(cfg: &ExperimentConfig, subcommand: &str) -> RunManifest {
        RunManifest {
            fingerprint: cfg.fingerprint(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config: cfg.clone(),
            noise_model: format!(
                "additive, time-constant diagonal multiplier on the Dirichlet sine basis: \
                 lambda_k = amp^2 * k^(-gamma), K = {}, gamma = {}, amp = {}",
                cfg.noise.modes, cfg.noise.gamma, cfg.noise.amp
            ),
            seeds: Vec::new(),
            runs: Vec::new(),
            outputs: Vec::new(),
            complete: false,
            error: None,
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn record_run(&mut self, label: impl Into<String>, seed: u64, wall_time_secs: f64) {
        if !self.seeds.contains(&seed) {
            self.seeds.push(seed);
        }
        self.runs.push(RunEntry {
            label: label.into(),
            seed,
            wall_time_secs,
        });
    }

    /// Writes `bytes` to `dir/name` and lists the file.
    pub fn write_output(
        &mut self,
        dir: &Path,
        name: &str,
        bytes: &[u8],
    ) -> Result<PathBuf, LabError> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| LabError::io(&path, e))?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(path)
    }

    pub fn finish(&mut self, error: Option<String>) {
        self.complete = error.is_none();
        self.error = error;
        self.finished_unix = Some(now());
    }

    pub fn save(&self, dir: &Path) -> Result<(), LabError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<RunManifest, LabError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
    }
}
