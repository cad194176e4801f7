//! Versioned JSON checkpoint.
//!
//! Layout (one JSON object):
//!
//! ```text
//! format       "attnae-checkpoint"
//! version      1
//! seed         training seed
//! hyperparams  Hyperparams
//! bounds       ScalerBounds used to scale the training data
//! noise_scale  per-channel noise of the scaled training data
//! params       ModelParams; each tensor is {rows, cols, data} with data row-major
//! ```
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! save → load is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ScalerBounds;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::Hyperparams;

pub const FORMAT: &str = "attnae-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub bounds: ScalerBounds,
    pub noise_scale: Vec<f64>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        hyperparams: Hyperparams,
        bounds: ScalerBounds,
        noise_scale: Vec<f64>,
        params: ModelParams,
    ) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            seed: hyperparams.seed,
            hyperparams,
            bounds,
            noise_scale,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "train a model first with `attnae train`".into(),
            },
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::domain(format!(
                "not a checkpoint: format `{}`",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::domain(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        self.params.arch.validate()?;
        let expected = self.params.zeros_like();
        for ((name, got), (_, want)) in self.params.tensors().into_iter().zip(expected.tensors()) {
            if got.shape() != want.shape() || got.data().len() != got.rows() * got.cols() {
                return Err(Error::Shape {
                    op: name,
                    left: got.shape(),
                    right: want.shape(),
                });
            }
            if !got.is_finite() {
                return Err(Error::NonFinite(format!("checkpoint tensor {name}")));
            }
        }
        let f = self.params.arch.features;
        if self.noise_scale.len() != f || self.bounds.channels.len() != f {
            return Err(Error::domain(
                "checkpoint channel count disagrees with the model",
            ));
        }
        self.bounds.validate()
    }
}
