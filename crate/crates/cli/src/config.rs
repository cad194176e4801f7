use std::path::{Path, PathBuf};

use attnae::diagnostics::{DetectionPolicy, ReportOptions, DEFAULT_MIN_WINDOWS};
use attnae::scenario::{InjectionSpec, ProfileSource};
use attnae::train::{Hyperparams, SearchSpace};
use attnae::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "ATTNAE_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub bounds: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    pub trials: usize,
    pub epochs: usize,
    pub space: SearchSpace,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            trials: 30,
            epochs: 10,
            space: SearchSpace::default(),
        }
    }
}

/// Everything a run needs besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub profile: ProfileSource,
    pub injections: Vec<InjectionSpec>,
    pub hyperparams: Hyperparams,
    pub tune: TuneSettings,
    pub policy: DetectionPolicy,
    pub min_windows: usize,
    pub report: ReportOptions,
    /// Evaluation interval `[start, end)` in seconds; whole frame when absent.
    pub interval: Option<(usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            paths: Paths::default(),
            profile: ProfileSource::Preset("default".into()),
            injections: Vec::new(),
            hyperparams: Hyperparams::default(),
            tune: TuneSettings::default(),
            policy: DetectionPolicy::default(),
            min_windows: DEFAULT_MIN_WINDOWS,
            report: ReportOptions::default(),
            interval: None,
        }
    }
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Usage(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, hint: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.into(),
        },
        _ => Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    parse_json(&text, path)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, "pass an existing JSON file to --config")
    }

    /// Flag, then config file, then `ATTNAE_SEED`.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<Option<u64>> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(Some(s));
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                v.trim().parse().map(Some).map_err(|_| {
                    Error::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))
                })
            }
            Err(_) => Ok(None),
        }
    }
}
