//! End-to-end steps shared by the command line, tests and the browser demo.

use crate::checkpoint::Checkpoint;
use crate::data::{make_windows, scale, split_train_val, ScalerBounds, SignalFrame, WindowBatch};
use crate::diagnostics::{
    calibrate, score_stream, segment_events, AnomalyEvent, BaselineStats, DetectionPolicy,
    StreamScore,
};
use crate::error::Result;
use crate::train::{train, Hyperparams, TrainReport};

/// Share of rows used for training; the rest (after a guard) validates.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Scales `frame`, splits it with a one-window guard and cuts stride-1 windows.
pub fn training_windows(
    frame: &SignalFrame,
    bounds: &ScalerBounds,
    window: usize,
) -> Result<(WindowBatch, WindowBatch)> {
    let scaled = scale(frame, bounds)?;
    let (tr, va) = split_train_val(&scaled, TRAIN_FRACTION, window)?;
    Ok((make_windows(&tr, window, 1)?, make_windows(&va, window, 1)?))
}

pub fn train_checkpoint(
    frame: &SignalFrame,
    bounds: &ScalerBounds,
    hp: &Hyperparams,
) -> Result<(Checkpoint, TrainReport)> {
    let (tw, vw) = training_windows(frame, bounds, hp.window)?;
    let out = train(&tw, &vw, hp)?;
    Ok((
        Checkpoint::new(hp.clone(), bounds.clone(), out.noise_scale, out.model),
        out.report,
    ))
}

/// Baseline of a checkpoint on raw (unscaled) normal data.
pub fn calibrate_raw(
    ck: &Checkpoint,
    frame: &SignalFrame,
    min_windows: usize,
) -> Result<BaselineStats> {
    calibrate(&ck.params, &scale(frame, &ck.bounds)?, min_windows)
}

/// Scores raw data and segments events.
pub fn detect_raw(
    ck: &Checkpoint,
    baseline: &BaselineStats,
    frame: &SignalFrame,
    policy: &DetectionPolicy,
) -> Result<(StreamScore, Vec<AnomalyEvent>)> {
    let score = score_stream(&ck.params, &scale(frame, &ck.bounds)?, baseline, policy)?;
    let events = segment_events(&score.flags, &score.channels, policy, Some((&score).into()))?;
    Ok((score, events))
}
