use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::write_csv;
use crate::error::Result;
use crate::federation::{run, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub status: RunStatus,
    /// Relative to the manifest's directory.
    pub csv: Option<String>,
    pub checkpoint: Option<String>,
    pub rounds: usize,
    pub final_mean_return: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub run_name: String,
    pub algorithm: String,
    pub env: String,
    pub num_agents: usize,
    pub num_byzantine: usize,
    pub attack_type: Option<String>,
    pub config: RunConfig,
    /// SHA-256 of the config's canonical JSON, seed excluded.
    pub config_hash: String,
    pub runs: Vec<RunEntry>,
}

impl SuiteManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn config_hash(config: &RunConfig) -> Result<String> {
    let mut c = config.clone();
    c.seed = 0;
    let digest = Sha256::digest(serde_json::to_vec(&c)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs `config` once per seed and writes `<out_dir>/<run_name>/seed_<s>.csv`,
/// a final checkpoint per run and `manifest.json`. A failed run is recorded
/// in the manifest and does not stop the others.
pub fn run_suite(
    config: &RunConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<(SuiteManifest, PathBuf)> {
    config.validate()?;
    let dir = out_dir.join(&config.run_name);
    std::fs::create_dir_all(&dir)?;

    let runs: Vec<RunEntry> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = config.clone();
            cfg.seed = seed;
            let outcome = run(&cfg).and_then(|log| {
                let csv = format!("seed_{seed}.csv");
                write_csv(&dir.join(&csv), &log.records)?;
                let ckpt = format!("seed_{seed}_final");
                log.final_params.save(&dir.join(&ckpt))?;
                Ok((log, csv, ckpt))
            });
            match outcome {
                Ok((log, csv, ckpt)) => RunEntry {
                    seed,
                    status: RunStatus::Ok,
                    csv: Some(csv),
                    checkpoint: Some(ckpt),
                    rounds: log.rounds(),
                    final_mean_return: Some(log.final_return()),
                    error: None,
                },
                Err(e) => RunEntry {
                    seed,
                    status: RunStatus::Failed,
                    csv: None,
                    checkpoint: None,
                    rounds: 0,
                    final_mean_return: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let manifest = SuiteManifest {
        run_name: config.run_name.clone(),
        algorithm: config.algorithm.as_str().into(),
        env: config.env.id.clone(),
        num_agents: config.num_agents,
        num_byzantine: config.num_byzantine,
        attack_type: config
            .attack
            .filter(|_| config.num_byzantine > 0)
            .map(|a| a.as_str().to_string()),
        config: config.clone(),
        config_hash: config_hash(config)?,
        runs,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok((manifest, path))
}
