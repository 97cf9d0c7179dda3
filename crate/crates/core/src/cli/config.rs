//! Run configuration documents, the resolved-config echo and output locks.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::eval::ProbeConfig;
use crate::jepa::TrainConfig;
use crate::masks::Geometry;
use crate::synthdata::{LabelNames, SyntheticDatasetSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub run: Run,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Run {
    Synth(SynthParams),
    Pretrain(PretrainParams),
    Eval(EvalParams),
    MaskViz(MaskVizParams),
    Ingest(IngestParams),
}

impl Run {
    pub fn command(&self) -> &'static str {
        match self {
            Run::Synth(_) => "synth",
            Run::Pretrain(_) => "pretrain",
            Run::Eval(_) => "eval",
            Run::MaskViz(_) => "mask-viz",
            Run::Ingest(_) => "ingest",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub out: PathBuf,
    pub spec: SyntheticDatasetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainParams {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Checkpoint,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Linear,
    Knn,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    /// Training pool; a synth output directory supplies its own test split.
    pub dataset: PathBuf,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub init: Init,
    /// Architecture and seed for `init = random`.
    pub arch: String,
    pub init_seed: u64,
    pub out: PathBuf,
    pub shots: Vec<usize>,
    pub seeds: usize,
    pub method: MethodChoice,
    pub k: usize,
    pub probe: ProbeConfig,
    /// Antenna upsampling; `None` picks the square-grid factor.
    pub upsample: Option<usize>,
    pub save_embeddings: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskVizParams {
    pub out: PathBuf,
    pub geometries: Vec<Geometry>,
    pub fraction: f64,
    pub seed: u64,
    pub antennas: usize,
    /// Input grid side (`antennas × upsampling = window`).
    pub size: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestParams {
    /// One file holding every antenna back to back, or one file per antenna.
    pub inputs: Vec<PathBuf>,
    pub meta: PathBuf,
    pub out: PathBuf,
    pub window: usize,
    pub stride: usize,
    pub tile_antennas: Option<usize>,
}

/// Sidecar describing a raw IQ capture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub antennas: usize,
    pub sample_rate: f64,
    #[serde(default)]
    pub labels: Option<SidecarLabels>,
    #[serde(default)]
    pub label_names: Option<LabelNames>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarLabels {
    #[serde(default)]
    pub modulation: Option<u16>,
    #[serde(default)]
    pub aoa: Option<u16>,
}

/// Reads a config document and checks it is for `command`.
pub fn load_config(path: &Path, command: &str) -> Result<Run, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("reading config {}: {e}", path.display())))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::usage(format!(
            "config {} has schema_version {}, expected {SCHEMA_VERSION}",
            path.display(),
            cfg.schema_version
        )));
    }
    if cfg.run.command() != command {
        return Err(CliError::usage(format!(
            "config {} is for '{}', not '{command}'",
            path.display(),
            cfg.run.command()
        )));
    }
    Ok(cfg.run)
}

pub fn write_config(dir: &Path, run: &Run) -> Result<PathBuf, CliError> {
    let doc = RunConfig {
        schema_version: SCHEMA_VERSION,
        run: run.clone(),
    };
    let path = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(&doc).expect("config serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("creating {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        let mut f: File = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::data(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    dir.display(),
                    path.display()
                ))
            } else {
                CliError::data(format!("creating {}: {e}", path.display()))
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_doc() -> RunConfig {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            run: Run::Synth(SynthParams {
                out: "d".into(),
                spec: SyntheticDatasetSpec::default(),
            }),
        }
    }

    #[test]
    fn config_round_trips() {
        let doc = synth_doc();
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"command\":\"synth\""));
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), doc);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(synth_doc()).unwrap();
        v["run"]["params"]["spec"]["extra"] = 1.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
        let mut v = serde_json::to_value(synth_doc()).unwrap();
        v["colour"] = "blue".into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn wrong_command_or_version_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let mut doc = synth_doc();
        fs::write(&p, serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(load_config(&p, "pretrain").unwrap_err().code, 2);
        assert!(load_config(&p, "synth").is_ok());
        doc.schema_version = 9;
        fs::write(&p, serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(load_config(&p, "synth").unwrap_err().code, 2);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert_eq!(OutputLock::acquire(dir.path()).unwrap_err().code, 3);
        drop(a);
        assert!(!dir.path().join(LOCK_FILE).exists());
        OutputLock::acquire(dir.path()).unwrap();
    }
}
