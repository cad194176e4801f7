//! Browser bindings: synthesize a scenario, train (or load) a model, then
//! detect and localize anomalies with attention heatmaps.

use attnae::checkpoint::Checkpoint;
use attnae::data::{Mask, SignalFrame};
use attnae::diagnostics::{
    heatmap_svg, localization_accuracy, AccuracyReport, AnomalyEvent, BaselineStats,
    DetectionPolicy, StreamScore, DEFAULT_MIN_WINDOWS,
};
use attnae::pipeline::{calibrate_raw, detect_raw, train_checkpoint};
use attnae::scenario::{gen_normal, inject_multi, OperationProfile, Reference};
use attnae::train::Hyperparams;
use attnae::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Hyperparameters small enough to train in a browser tab.
pub fn compact_hyperparams(seed: u64, epochs: usize) -> Hyperparams {
    Hyperparams {
        hidden1: 16,
        hidden2: 8,
        bottleneck: 16,
        attention: 16,
        context: 16,
        epochs,
        seed,
        patience: None,
        ..Hyperparams::default()
    }
}

#[derive(Serialize)]
struct FrameView<'a> {
    channels: &'a [String],
    timestamps: &'a [f64],
    series: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

#[derive(Serialize)]
struct TrainView {
    epochs: usize,
    train_loss: Vec<f64>,
    val_loss: Vec<f64>,
    best_epoch: usize,
    parameters: usize,
}

#[derive(Serialize)]
struct DetectView<'a> {
    channels: &'a [String],
    starts: &'a [usize],
    flags: Vec<Vec<bool>>,
    feature_weights: Vec<Vec<f64>>,
    mean_feature_weights: Vec<f64>,
    events: &'a [AnomalyEvent],
    accuracy: Option<AccuracyReport>,
}

fn mask_columns(mask: &Mask) -> Vec<Vec<bool>> {
    (0..mask.cols()).map(|c| mask.column(c)).collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Usage(e.to_string()))
}

/// Demo state shared by the wasm wrapper and native tests.
#[derive(Debug, Default)]
pub struct Demo {
    pub seed: u64,
    pub frame: Option<SignalFrame>,
    pub truth: Option<Mask>,
    pub checkpoint: Option<Checkpoint>,
    pub baseline: Option<BaselineStats>,
    pub policy: DetectionPolicy,
    pub score: Option<StreamScore>,
    pub events: Vec<AnomalyEvent>,
}

impl Demo {
    pub fn new(seed: u64) -> Self {
        Demo {
            seed,
            ..Demo::default()
        }
    }

    /// Seed of later scenarios and training runs; a loaded model is kept.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    /// Evaluation frame with a reference layout (`normal`, `drift`, `spike`
    /// or `concurrent`), returned as JSON.
    pub fn scenario(&mut self, name: &str) -> Result<String> {
        let profile = OperationProfile::test(9000 + self.seed);
        let (normal, _) = gen_normal(&profile)?;
        let (frame, truth) = if name == "normal" {
            let m = Mask::new(normal.len(), normal.channels.len());
            (normal, m)
        } else {
            let specs = Reference::parse(name)?.specs(&profile.noise, normal.len());
            let inj = inject_multi(&normal, &specs)?;
            (inj.frame, inj.mask)
        };
        self.score = None;
        self.events.clear();
        let view = FrameView {
            channels: &frame.channels,
            timestamps: &frame.timestamps,
            series: (0..frame.channels.len())
                .map(|c| frame.values.column(c))
                .collect(),
            mask: mask_columns(&truth),
        };
        let json = to_json(&view)?;
        self.frame = Some(frame);
        self.truth = Some(truth);
        Ok(json)
    }

    /// Trains a compact model on `duration` seconds of normal operation and
    /// calibrates it on a separate normal run.
    pub fn train(&mut self, epochs: usize, duration: usize) -> Result<String> {
        let hp = compact_hyperparams(self.seed, epochs);
        let (frame, bounds) = gen_normal(&OperationProfile::training(self.seed, duration))?;
        let (ck, report) = train_checkpoint(&frame, &bounds, &hp)?;
        let (cal, _) = gen_normal(&OperationProfile::calibration(5000 + self.seed))?;
        self.baseline = Some(calibrate_raw(&ck, &cal, DEFAULT_MIN_WINDOWS)?);
        let view = TrainView {
            epochs: report.train_loss.len(),
            train_loss: report.train_loss,
            val_loss: report.val_loss,
            best_epoch: report.best_epoch,
            parameters: ck.params.parameter_count(),
        };
        self.checkpoint = Some(ck);
        to_json(&view)
    }

    /// Loads artifacts written by the command line (`train` and `calibrate`).
    pub fn load(&mut self, checkpoint_json: &str, baseline_json: &str) -> Result<()> {
        let ck = Checkpoint::from_json(checkpoint_json)?;
        let baseline: BaselineStats = serde_json::from_str(baseline_json)
            .map_err(|e| Error::Usage(format!("baseline: {e}")))?;
        baseline.validate()?;
        self.checkpoint = Some(ck);
        self.baseline = Some(baseline);
        Ok(())
    }

    pub fn set_thresholds(&mut self, k_feature: f64, k_temporal: f64) -> Result<()> {
        let policy = DetectionPolicy {
            k_feature,
            k_temporal,
            ..self.policy
        };
        policy.validate()?;
        self.policy = policy;
        Ok(())
    }

    /// Scores the current frame; flags, events and accuracy as JSON.
    pub fn detect(&mut self) -> Result<String> {
        let frame = self
            .frame
            .as_ref()
            .ok_or_else(|| Error::Usage("generate a scenario first".into()))?;
        let (ck, baseline) = match (&self.checkpoint, &self.baseline) {
            (Some(c), Some(b)) => (c, b),
            _ => return Err(Error::Usage("train or load a model first".into())),
        };
        let (score, events) = detect_raw(ck, baseline, frame, &self.policy)?;
        let accuracy = match &self.truth {
            Some(t) => Some(localization_accuracy(&events, t, &score.channels, None)?),
            None => None,
        };
        let view = DetectView {
            channels: &score.channels,
            starts: &score.starts,
            flags: mask_columns(&score.flags),
            feature_weights: score
                .reports
                .iter()
                .map(|r| r.feature_weights.clone())
                .collect(),
            mean_feature_weights: score.mean_feature_weights(),
            events: &events,
            accuracy,
        };
        let json = to_json(&view)?;
        self.score = Some(score);
        self.events = events;
        Ok(json)
    }

    /// Temporal-attention heatmap of the window covering second `second`.
    pub fn heatmap(&self, second: usize) -> Result<String> {
        let score = self
            .score
            .as_ref()
            .ok_or_else(|| Error::Usage("run detection first".into()))?;
        let last = score.starts.len().saturating_sub(1);
        let w = score
            .starts
            .partition_point(|&s| s + score.window <= second)
            .min(last);
        let r = score
            .reports
            .get(w)
            .ok_or_else(|| Error::Usage("no windows scored".into()))?;
        Ok(heatmap_svg(
            &r.temporal_matrix,
            &score.channels,
            score.starts[w],
        ))
    }
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Session {
    inner: Demo,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Session {
        Session {
            inner: Demo::new(seed),
        }
    }

    #[wasm_bindgen(js_name = setSeed)]
    pub fn set_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    pub fn scenario(&mut self, name: &str) -> std::result::Result<String, JsError> {
        self.inner.scenario(name).map_err(js_err)
    }

    pub fn train(
        &mut self,
        epochs: usize,
        duration: usize,
    ) -> std::result::Result<String, JsError> {
        self.inner.train(epochs, duration).map_err(js_err)
    }

    pub fn load(
        &mut self,
        checkpoint_json: &str,
        baseline_json: &str,
    ) -> std::result::Result<(), JsError> {
        self.inner
            .load(checkpoint_json, baseline_json)
            .map_err(js_err)
    }

    #[wasm_bindgen(js_name = setThresholds)]
    pub fn set_thresholds(
        &mut self,
        k_feature: f64,
        k_temporal: f64,
    ) -> std::result::Result<(), JsError> {
        self.inner
            .set_thresholds(k_feature, k_temporal)
            .map_err(js_err)
    }

    pub fn detect(&mut self) -> std::result::Result<String, JsError> {
        self.inner.detect().map_err(js_err)
    }

    pub fn heatmap(&self, second: usize) -> std::result::Result<String, JsError> {
        self.inner.heatmap(second).map_err(js_err)
    }
}
