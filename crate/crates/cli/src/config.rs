use anyhow::{Context, Result};
use odtf_core::model::Hyperparameters;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// JSON run configuration; every field can be overridden on the command
/// line. Unset fields fall back to the library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub hyperparameters: Option<Hyperparameters>,
    pub seed: Option<u64>,
    pub sampling_rate: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.hyperparameters.clone().unwrap_or_default()
    }
}

/// Resolved output directory: flag beats config beats ODTF_OUT_DIR beats
/// the current directory.
pub fn resolve_out_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output_dir {
        return p.clone();
    }
    if let Ok(p) = std::env::var("ODTF_OUT_DIR") {
        return PathBuf::from(p);
    }
    PathBuf::from(".")
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub crate_version: String,
}

pub fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    config_json: &str,
    seed: u64,
) -> Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    let manifest = RunManifest {
        command: command.to_string(),
        config_sha256: format!("{:x}", hasher.finalize()),
        seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let path = out_dir.join("run_manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
