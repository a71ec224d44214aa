//! Experiment orchestration: stages run in order, artifacts land in the
//! output directory with their SHA-256 digests recorded in `manifest.json`.
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Numeric artifacts depend only on the config, so reruns reproduce them
//! byte for byte; timings live in the manifest alone.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentKind, ParsedConfig, Params, RunConfig};
pub use experiments::{Artifact, StageOutput};

use crate::error::LabError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ACCEPTANCE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Pass,
    Fail,
    Error,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub config_sha256: String,
    pub defaulted: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    pub pass: bool,
    pub exit_code: i32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn error_code(e: &LabError) -> i32 {
    match e {
        LabError::Invalid(_) | LabError::GridMismatch(_) | LabError::Json(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Output directory: explicit override, then the config, then `out/<kind>`.
pub fn output_dir(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()))
}

/// Runs every stage and writes artifacts plus `manifest.json` under `out`.
///
/// A failing or erroring stage stops the run; the manifest still records it.
pub fn run(parsed: &ParsedConfig, out: &Path) -> std::io::Result<RunManifest> {
    let cfg = &parsed.config;
    let config_json = cfg.to_json();
    let mut artifacts = Vec::new();
    let mut records = Vec::new();
    let record_file = |name: &str, bytes: &[u8], list: &mut Vec<ArtifactRecord>| -> std::io::Result<()> {
        write_atomic(&out.join(name), bytes)?;
        list.push(ArtifactRecord { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    };
    record_file("config.json", config_json.as_bytes(), &mut artifacts)?;
    let mut exit_code = EXIT_PASS;
    for (name, body) in experiments::stages(cfg) {
        if exit_code != EXIT_PASS {
            records.push(StageRecord { name: name.into(), status: StageStatus::Skipped, seconds: 0.0, error: None });
            continue;
        }
        let start = Instant::now();
        let result = body();
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok(stage) => {
                let metrics = serde_json::json!({ "stage": name, "pass": stage.pass, "metrics": stage.metrics });
                let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n";
                record_file(&format!("{name}/metrics.json"), text.as_bytes(), &mut artifacts)?;
                for a in &stage.artifacts {
                    record_file(&format!("{name}/{}", a.name), &a.bytes, &mut artifacts)?;
                }
                let status = if stage.pass { StageStatus::Pass } else { StageStatus::Fail };
                if !stage.pass {
                    exit_code = EXIT_ACCEPTANCE;
                }
                records.push(StageRecord { name: name.into(), status, seconds, error: None });
            }
            Err(e) => {
                exit_code = error_code(&e);
                records.push(StageRecord { name: name.into(), status: StageStatus::Error, seconds, error: Some(e.to_string()) });
            }
        }
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.experiment,
        seed: cfg.seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        defaulted: parsed.defaulted.clone(),
        stages: records,
        artifacts,
        pass: exit_code == EXIT_PASS,
        exit_code,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&out.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}
