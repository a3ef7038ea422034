use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dvp_core::{GeneratorConfig, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub input: PathBuf,
    pub processed: PathBuf,
    pub output: PathBuf,
    pub flow_dir: Option<PathBuf>,
}

/// Everything that determines a `run`, plus timings that do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub paths: RunPaths,
    pub generator: GeneratorConfig,
    pub training: TrainConfig,
    pub save_confidence: bool,
    pub trace_timing: bool,
    pub wall_seconds: f64,
    pub epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub tool: String,
    pub version: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub motion: (f32, f32),
    pub spec: SynthSpec,
    /// Inter-mode gap between modes 0 and 1 on the clean clip.
    pub mode_gap: Option<f64>,
    pub wall_seconds: f64,
}

pub fn tool_version() -> (String, String) {
    ("dvp".to_string(), env!("CARGO_PKG_VERSION").to_string())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_run_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
