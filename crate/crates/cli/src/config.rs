//! Run configuration: a TOML file with one table per concern, every value
//! defaulted, unknown keys rejected. Command-line flags override file
//! values; the fully resolved config is recorded in `run.json` next to the
//! artifacts so any run can be reproduced from that file alone.

use std::fs;
use std::path::{Path, PathBuf};

use nanotrack_core::error::{Error, Result};
use nanotrack_core::sim::episode::EpisodeParams;
use nanotrack_core::sim::trajectory::{PathKind, TrajectorySpec};
use nanotrack_core::sim::Camera;
use nanotrack_core::train::Hyperparams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; governs model init, shuffling, rendering, episodes.
    /// Overrides any seed inside the [train] table.
    pub seed: u64,
    pub paths: Paths,
    pub train: Hyperparams,
    pub camera: Camera,
    pub quantize: QuantizeConfig,
    pub render: RenderConfig,
    pub simulate: SimulateConfig,
    pub episode: EpisodeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset root (annotations.jsonl + images/).
    pub dataset: PathBuf,
    /// Model file read or written by train/quantize/eval/simulate.
    pub model: PathBuf,
    /// Directory for reports, plots, and run.json.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { dataset: "data".into(), model: "model.ntrk".into(), output: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeConfig {
    /// Images drawn from the dataset for range calibration.
    pub calibration_images: usize,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig { calibration_images: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub frames: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { frames: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptionKind {
    Oracle,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub perception: PerceptionKind,
    pub trajectory: TrajectorySpec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            perception: PerceptionKind::Oracle,
            trajectory: TrajectorySpec {
                kind: PathKind::Spiral { radius: 0.5, pitch: 0.3, axis: [0.0, 0.0, 1.0] },
                speed: 0.21,
                duration: 60.0,
                start: [1.0, 0.0, 0.0],
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    /// Hex SHA-256 of the resolved config's canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        format!("{:x}", hasher.finalize())
    }
}

#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    /// Subcommand plus its resolved arguments.
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub versions: Versions,
    pub config: &'a RunConfig,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub core: &'static str,
}

/// Writes `run.json` into the output directory, creating it if needed.
pub fn write_provenance(config: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&config.paths.output)?;
    let record = Provenance {
        command: command.to_string(),
        seed: config.seed,
        config_sha256: config.digest(),
        versions: Versions { cli: env!("CARGO_PKG_VERSION"), core: nanotrack_core::VERSION },
        config,
    };
    let path = config.paths.output.join("run.json");
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}
