//! Baselines, flagging, event segmentation, accuracy and the report bundle.
//!
//! Scoring is done per cell of every stride-1 window. A cell (second,
//! channel) votes anomalous when its temporal weight is far below the
//! baseline, or when the window's feature weight for that channel is far
//! above baseline and the cell's temporal weight is at least moderately low.
//! A second is flagged when more than `vote` of the windows covering it vote.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionReport;
use crate::data::{make_windows, write_text, Mask, SignalFrame};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelParams};
use crate::numeric::{Matrix, Rng};

pub const DEFAULT_MIN_WINDOWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub channels: Vec<String>,
    pub window: usize,
    /// Number of windows the statistics were estimated from.
    pub windows: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub temporal_mean: Vec<f64>,
    pub temporal_std: Vec<f64>,
}

impl BaselineStats {
    pub fn validate(&self) -> Result<()> {
        let f = self.channels.len();
        let lens = [
            self.feature_mean.len(),
            self.feature_std.len(),
            self.temporal_mean.len(),
            self.temporal_std.len(),
        ];
        if f == 0 || lens.iter().any(|&l| l != f) {
            return Err(Error::domain(
                "baseline vectors disagree with the channel list",
            ));
        }
        for (i, c) in self.channels.iter().enumerate() {
            for (what, s) in [
                ("feature", self.feature_std[i]),
                ("temporal", self.temporal_std[i]),
            ] {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::domain(format!(
                        "degenerate {what} baseline std {s} for `{c}`"
                    )));
                }
            }
            if !(self.feature_mean[i].is_finite() && self.temporal_mean[i].is_finite()) {
                return Err(Error::NonFinite(format!("baseline mean for `{c}`")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json("baseline", e))?;
        write_text(path, &(json + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "compute a baseline with `attnae calibrate`".into(),
            },
            _ => Error::io(path, e),
        })?;
        let b: BaselineStats =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        b.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionPolicy {
    /// Sigma multiplier for feature-weight excess.
    pub k_feature: f64,
    /// Sigma multiplier for temporal-weight deficit.
    pub k_temporal: f64,
    /// Temporal deficit (in sigmas) a cell needs for a feature excess to count.
    pub feature_support_k: f64,
    /// Runs separated by at most this many unflagged seconds are merged.
    pub hysteresis: usize,
    /// Events shorter than this are dropped.
    pub min_length: usize,
    /// Fraction of covering windows that must vote for a second to be flagged.
    pub vote: f64,
}

impl Default for DetectionPolicy {
    fn default() -> Self {
        DetectionPolicy {
            k_feature: 3.0,
            k_temporal: 3.0,
            feature_support_k: 1.0,
            hysteresis: 2,
            min_length: 2,
            vote: 0.5,
        }
    }
}

impl DetectionPolicy {
    pub fn validate(&self) -> Result<()> {
        let ks = [self.k_feature, self.k_temporal, self.feature_support_k];
        if ks.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::domain("policy sigma multipliers must be positive"));
        }
        if self.min_length == 0 || !(self.vote > 0.0 && self.vote < 1.0) {
            return Err(Error::domain(
                "policy needs min_length ≥ 1 and vote in (0, 1)",
            ));
        }
        Ok(())
    }
}

/// Infer-mode attention reports for every stride-1 window of a scaled frame.
pub fn window_reports(
    model: &ModelParams,
    frame: &SignalFrame,
) -> Result<(Vec<usize>, Vec<AttentionReport>)> {
    if frame.channels.len() != model.arch.features {
        return Err(Error::domain(format!(
            "frame has {} channels, model expects {}",
            frame.channels.len(),
            model.arch.features
        )));
    }
    let batch = make_windows(frame, model.arch.window, 1)?;
    let mut rng = Rng::new(0);
    let mut reports = Vec::with_capacity(batch.len());
    for chunk in batch.windows.chunks(64) {
        reports.extend(model.forward_batch(chunk, Mode::Infer, &mut rng)?.reports);
    }
    Ok((batch.starts, reports))
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn baseline_from_reports(
    reports: &[AttentionReport],
    channels: &[String],
    min_windows: usize,
) -> Result<BaselineStats> {
    if reports.len() < min_windows.max(1) {
        return Err(Error::domain(format!(
            "baseline needs at least {min_windows} windows, got {}",
            reports.len()
        )));
    }
    let f = channels.len();
    let window = reports[0].temporal_matrix.rows();
    if reports
        .iter()
        .any(|r| r.feature_weights.len() != f || r.temporal_matrix.shape() != (window, f))
    {
        return Err(Error::domain(
            "attention reports disagree with the channel list",
        ));
    }
    let mut stats = BaselineStats {
        channels: channels.to_vec(),
        window,
        windows: reports.len(),
        feature_mean: Vec::with_capacity(f),
        feature_std: Vec::with_capacity(f),
        temporal_mean: Vec::with_capacity(f),
        temporal_std: Vec::with_capacity(f),
    };
    for c in 0..f {
        let (m, s) = mean_std(reports.iter().map(|r| r.feature_weights[c]));
        stats.feature_mean.push(m);
        stats.feature_std.push(s);
        let (m, s) = mean_std(
            reports
                .iter()
                .flat_map(|r| (0..window).map(move |t| r.temporal_matrix.get(t, c))),
        );
        stats.temporal_mean.push(m);
        stats.temporal_std.push(s);
    }
    Ok(stats)
}

/// Baseline statistics of a frozen model on scaled normal data.
pub fn calibrate(
    model: &ModelParams,
    frame: &SignalFrame,
    min_windows: usize,
) -> Result<BaselineStats> {
    if frame.len() < model.arch.window {
        return Err(Error::domain("calibration frame shorter than one window"));
    }
    let (_, reports) = window_reports(model, frame)?;
    baseline_from_reports(&reports, &frame.channels, min_windows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamScore {
    pub channels: Vec<String>,
    pub window: usize,
    pub starts: Vec<usize>,
    pub reports: Vec<AttentionReport>,
    /// Per-second, per-channel flags after voting.
    pub flags: Mask,
    /// Fraction of covering windows that voted, `N × F`.
    pub vote_fraction: Matrix,
    /// Whether any cell of a window voted for the channel, `windows × F`.
    pub window_flags: Mask,
    /// Peak feature-weight excess in sigmas over covering windows, `N × F`.
    pub feature_z: Matrix,
    /// Peak temporal-weight deficit in sigmas over covering windows, `N × F`.
    pub temporal_z: Matrix,
}

impl StreamScore {
    pub fn len(&self) -> usize {
        self.flags.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_feature_weights(&self) -> Vec<f64> {
        let f = self.channels.len();
        (0..f)
            .map(|c| {
                self.reports
                    .iter()
                    .map(|r| r.feature_weights[c])
                    .sum::<f64>()
                    / self.reports.len() as f64
            })
            .collect()
    }

    pub fn mean_temporal_weights(&self) -> Vec<f64> {
        let f = self.channels.len();
        let cells = (self.reports.len() * self.window) as f64;
        (0..f)
            .map(|c| {
                self.reports
                    .iter()
                    .map(|r| r.temporal_matrix.column(c).iter().sum::<f64>())
                    .sum::<f64>()
                    / cells
            })
            .collect()
    }
}

/// Votes, flags and deviations from precomputed window reports.
pub fn score_reports(
    reports: Vec<AttentionReport>,
    starts: Vec<usize>,
    frame_len: usize,
    baseline: &BaselineStats,
    policy: &DetectionPolicy,
) -> Result<StreamScore> {
    baseline.validate()?;
    policy.validate()?;
    let f = baseline.channels.len();
    let t_len = baseline.window;
    if reports.len() != starts.len() || reports.is_empty() {
        return Err(Error::domain(
            "need one start per report and at least one window",
        ));
    }
    let mut vote = Matrix::zeros(frame_len, f);
    let mut cover = vec![0usize; frame_len];
    let mut feature_z = Matrix::filled(frame_len, f, f64::NEG_INFINITY);
    let mut temporal_z = Matrix::filled(frame_len, f, f64::NEG_INFINITY);
    let mut window_flags = Mask::new(reports.len(), f);
    for (w, (r, &s)) in reports.iter().zip(&starts).enumerate() {
        if r.feature_weights.len() != f
            || r.temporal_matrix.shape() != (t_len, f)
            || s + t_len > frame_len
        {
            return Err(Error::domain(format!(
                "window {w} disagrees with the baseline or frame"
            )));
        }
        for t in 0..t_len {
            cover[s + t] += 1;
        }
        for c in 0..f {
            let fz = (r.feature_weights[c] - baseline.feature_mean[c]) / baseline.feature_std[c];
            let feature_high = fz > policy.k_feature;
            for t in 0..t_len {
                let sec = s + t;
                let tz = (baseline.temporal_mean[c] - r.temporal_matrix.get(t, c))
                    / baseline.temporal_std[c];
                if tz > policy.k_temporal || (feature_high && tz > policy.feature_support_k) {
                    vote.set(sec, c, vote.get(sec, c) + 1.0);
                    window_flags.set(w, c, true);
                }
                feature_z.set(sec, c, feature_z.get(sec, c).max(fz));
                temporal_z.set(sec, c, temporal_z.get(sec, c).max(tz));
            }
        }
    }
    let mut flags = Mask::new(frame_len, f);
    for sec in 0..frame_len {
        for c in 0..f {
            let frac = if cover[sec] == 0 {
                feature_z.set(sec, c, 0.0);
                temporal_z.set(sec, c, 0.0);
                0.0
            } else {
                vote.get(sec, c) / cover[sec] as f64
            };
            vote.set(sec, c, frac);
            flags.set(sec, c, frac > policy.vote);
        }
    }
    Ok(StreamScore {
        channels: baseline.channels.clone(),
        window: t_len,
        starts,
        reports,
        flags,
        vote_fraction: vote,
        window_flags,
        feature_z,
        temporal_z,
    })
}

/// Scores a scaled frame second by second against a baseline.
pub fn score_stream(
    model: &ModelParams,
    frame: &SignalFrame,
    baseline: &BaselineStats,
    policy: &DetectionPolicy,
) -> Result<StreamScore> {
    if frame.channels != baseline.channels {
        return Err(Error::domain(format!(
            "baseline channels {:?} do not match frame channels {:?}",
            baseline.channels, frame.channels
        )));
    }
    if baseline.window != model.arch.window {
        return Err(Error::domain(
            "baseline window length differs from the model's",
        ));
    }
    if frame.len() < model.arch.window {
        return Err(Error::domain("frame shorter than one window"));
    }
    let (starts, reports) = window_reports(model, frame)?;
    score_reports(reports, starts, frame.len(), baseline, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub channel: String,
    /// First anomalous second.
    pub onset: usize,
    /// One past the last anomalous second.
    pub offset: usize,
    pub duration: usize,
    /// Peak normalized deviation over the event.
    pub severity: f64,
    /// Peak feature-weight excess in sigmas.
    pub feature_excess: f64,
    /// Peak temporal-weight deficit in sigmas.
    pub temporal_deficit: f64,
}

/// Maximal runs of `true`, as half-open intervals.
pub fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in flags.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len()));
    }
    out
}

/// Runs merged across gaps of at most `gap` seconds, then filtered by length.
pub fn merge_runs(runs: &[(usize, usize)], gap: usize, min_length: usize) -> Vec<(usize, usize)> {
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for &(s, e) in runs {
        match merged.last_mut() {
            Some(last) if s - last.1 <= gap => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    merged.retain(|(s, e)| e - s >= min_length);
    merged
}

/// Per-second deviations backing event severity.
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a> {
    pub feature_z: &'a Matrix,
    pub temporal_z: &'a Matrix,
}

impl<'a> From<&'a StreamScore> for Evidence<'a> {
    fn from(s: &'a StreamScore) -> Self {
        Evidence {
            feature_z: &s.feature_z,
            temporal_z: &s.temporal_z,
        }
    }
}

/// Events ordered by onset, then channel order.
pub fn segment_events(
    flags: &Mask,
    channels: &[String],
    policy: &DetectionPolicy,
    evidence: Option<Evidence<'_>>,
) -> Result<Vec<AnomalyEvent>> {
    if flags.cols() != channels.len() {
        return Err(Error::domain("flag matrix and channel list disagree"));
    }
    if let Some(ev) = evidence {
        if ev.feature_z.shape() != (flags.rows(), flags.cols())
            || ev.temporal_z.shape() != ev.feature_z.shape()
        {
            return Err(Error::domain("evidence and flag matrix disagree"));
        }
    }
    let mut events = Vec::new();
    for (c, name) in channels.iter().enumerate() {
        for (onset, offset) in merge_runs(
            &runs(&flags.column(c)),
            policy.hysteresis,
            policy.min_length,
        ) {
            let (mut fx, mut td) = (0.0f64, 0.0f64);
            if let Some(ev) = evidence {
                fx = (onset..offset)
                    .map(|t| ev.feature_z.get(t, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                td = (onset..offset)
                    .map(|t| ev.temporal_z.get(t, c))
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            events.push(AnomalyEvent {
                channel: name.clone(),
                onset,
                offset,
                duration: offset - onset,
                severity: fx.max(td),
                feature_excess: fx,
                temporal_deficit: td,
            });
        }
    }
    let pos = |e: &AnomalyEvent| channels.iter().position(|c| *c == e.channel);
    events.sort_by_key(|e| (e.onset, pos(e)));
    Ok(events)
}

pub fn events_to_mask(events: &[AnomalyEvent], rows: usize, channels: &[String]) -> Result<Mask> {
    let mut m = Mask::new(rows, channels.len());
    for e in events {
        let c = channels
            .iter()
            .position(|n| *n == e.channel)
            .ok_or_else(|| Error::domain(format!("event on unknown channel `{}`", e.channel)))?;
        if !(e.onset < e.offset && e.offset <= rows) {
            return Err(Error::domain(format!(
                "event [{}, {}) does not fit a {rows}-second frame",
                e.onset, e.offset
            )));
        }
        for t in e.onset..e.offset {
            m.set(t, c, true);
        }
    }
    Ok(m)
}

fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = a.1.max(b.1) - a.0.min(b.0);
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAccuracy {
    pub channel: String,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    /// `(TP + TN) / seconds` over the evaluation interval.
    pub accuracy: f64,
    /// Truth-positive seconds inside the interval.
    pub anomaly_seconds: usize,
    /// `TP / anomaly_seconds`; absent when the channel has no anomaly there.
    pub anomaly_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMatch {
    pub channel: String,
    pub onset: usize,
    pub offset: usize,
    /// Best IoU against an interval on the same channel from the other side.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub interval: (usize, usize),
    pub seconds: usize,
    pub per_channel: Vec<ChannelAccuracy>,
    /// Correct cells over all cells of the interval.
    pub overall: f64,
    /// True positives over truth-positive cells; absent without anomalies.
    pub anomaly_overall: Option<f64>,
    /// One entry per true anomaly run, matched against detected events.
    pub truth_events: Vec<IntervalMatch>,
    /// One entry per detected event, matched against true anomaly runs.
    pub detected_events: Vec<IntervalMatch>,
}

impl AccuracyReport {
    pub fn channel(&self, name: &str) -> Option<&ChannelAccuracy> {
        self.per_channel.iter().find(|c| c.channel == name)
    }
}

/// Per-second accuracy of `events` against `truth` on `interval` (the whole
/// frame when `None`), plus interval IoU in both directions.
pub fn localization_accuracy(
    events: &[AnomalyEvent],
    truth: &Mask,
    channels: &[String],
    interval: Option<(usize, usize)>,
) -> Result<AccuracyReport> {
    if truth.cols() != channels.len() {
        return Err(Error::domain("truth mask and channel list disagree"));
    }
    let n = truth.rows();
    let (lo, hi) = interval.unwrap_or((0, n));
    if !(lo < hi && hi <= n) {
        return Err(Error::domain(format!(
            "evaluation interval [{lo}, {hi}) invalid for {n} seconds"
        )));
    }
    let pred = events_to_mask(events, n, channels)?;
    let mut per_channel = Vec::with_capacity(channels.len());
    let (mut correct, mut tp_all, mut pos_all) = (0, 0, 0);
    let mut truth_events = Vec::new();
    let mut detected_events = Vec::new();
    for (c, name) in channels.iter().enumerate() {
        let (mut tp, mut tn, mut fp, mut fnn) = (0, 0, 0, 0);
        for t in lo..hi {
            match (pred.get(t, c), truth.get(t, c)) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
            }
        }
        let pos = tp + fnn;
        correct += tp + tn;
        tp_all += tp;
        pos_all += pos;
        per_channel.push(ChannelAccuracy {
            channel: name.clone(),
            true_positive: tp,
            true_negative: tn,
            false_positive: fp,
            false_negative: fnn,
            accuracy: (tp + tn) as f64 / (hi - lo) as f64,
            anomaly_seconds: pos,
            anomaly_accuracy: (pos > 0).then(|| tp as f64 / pos as f64),
        });
        let truth_runs = runs(&truth.column(c));
        let detected: Vec<(usize, usize)> = events
            .iter()
            .filter(|e| e.channel == *name)
            .map(|e| (e.onset, e.offset))
            .collect();
        let best = |x: (usize, usize), others: &[(usize, usize)]| {
            others.iter().map(|&o| iou(x, o)).fold(0.0, f64::max)
        };
        for &r in &truth_runs {
            truth_events.push(IntervalMatch {
                channel: name.clone(),
                onset: r.0,
                offset: r.1,
                iou: best(r, &detected),
            });
        }
        for &d in &detected {
            detected_events.push(IntervalMatch {
                channel: name.clone(),
                onset: d.0,
                offset: d.1,
                iou: best(d, &truth_runs),
            });
        }
    }
    Ok(AccuracyReport {
        interval: (lo, hi),
        seconds: hi - lo,
        per_channel,
        overall: correct as f64 / ((hi - lo) * channels.len()) as f64,
        anomaly_overall: (pos_all > 0).then(|| tp_all as f64 / pos_all as f64),
        truth_events,
        detected_events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// Heatmaps for windows whose start is a multiple of this; 0 disables.
    pub heatmap_stride: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { heatmap_stride: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: String,
    pub mean_feature_weight: f64,
    pub mean_temporal_weight: f64,
    pub flagged_seconds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub version: u32,
    pub frame_len: usize,
    pub window: usize,
    pub windows: usize,
    pub channels: Vec<ChannelSummary>,
    pub policy: DetectionPolicy,
    pub baseline: BaselineStats,
    pub events: Vec<AnomalyEvent>,
    pub heatmaps: Vec<usize>,
}

fn csv_line(fields: &[String]) -> String {
    fields.join(",") + "\n"
}

/// Blue below the uniform level `1/F`, red above, white at it.
fn heat_color(value: f64, features: usize) -> String {
    let x = (value * features as f64 - 1.0).clamp(-1.0, 1.0);
    let fade = |v: f64| (255.0 * (1.0 - v.abs())).round() as u8;
    let (r, g, b) = if x < 0.0 {
        (fade(x), fade(x), 255)
    } else {
        (255, fade(x), fade(x))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn heatmap_svg(matrix: &Matrix, channels: &[String], start: usize) -> String {
    let (t_len, f) = matrix.shape();
    let (cell, left, top) = (24, 110, 30);
    let width = left + cell * t_len + 10;
    let height = top + cell * f + 30;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="18">temporal weights, window {start}..{}</text>"#,
        start + t_len
    );
    for (c, name) in channels.iter().enumerate() {
        let y = top + c * cell;
        let _ = writeln!(s, r#"<text x="4" y="{}">{name}</text>"#, y + cell / 2 + 4);
        for t in 0..t_len {
            let v = matrix.get(t, c);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="{}"><title>{name} t={}: {v:.4}</title></rect>"#,
                left + t * cell,
                heat_color(v, f),
                start + t
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}">seconds</text>"#,
        top + cell * f + 18
    );
    s.push_str("</svg>\n");
    s
}

/// Writes the report bundle into `dir` and returns its summary.
pub fn emit_report(
    dir: &Path,
    score: &StreamScore,
    events: &[AnomalyEvent],
    baseline: &BaselineStats,
    policy: &DetectionPolicy,
    options: &ReportOptions,
) -> Result<ReportSummary> {
    let heat_dir = dir.join("heatmaps");
    std::fs::create_dir_all(&heat_dir).map_err(|e| Error::io(&heat_dir, e))?;
    let chans = &score.channels;
    let fw = score.mean_feature_weights();
    let tw = score.mean_temporal_weights();

    let mut s = String::from("channel,mean_feature_weight,baseline_mean,baseline_std\n");
    for (c, name) in chans.iter().enumerate() {
        s += &csv_line(&[
            name.clone(),
            fw[c].to_string(),
            baseline.feature_mean[c].to_string(),
            baseline.feature_std[c].to_string(),
        ]);
    }
    write_text(&dir.join("feature_weights.csv"), &s)?;

    let mut s = String::from("channel,mean_temporal_weight,baseline_mean,baseline_std\n");
    for (c, name) in chans.iter().enumerate() {
        s += &csv_line(&[
            name.clone(),
            tw[c].to_string(),
            baseline.temporal_mean[c].to_string(),
            baseline.temporal_std[c].to_string(),
        ]);
    }
    write_text(&dir.join("temporal_means.csv"), &s)?;

    let mut header = vec!["start".to_string()];
    header.extend(chans.iter().map(|c| format!("fw_{c}")));
    header.extend(chans.iter().map(|c| format!("tw_{c}")));
    let mut s = csv_line(&header);
    for (r, &start) in score.reports.iter().zip(&score.starts) {
        let mut row = vec![start.to_string()];
        row.extend(r.feature_weights.iter().map(|v| v.to_string()));
        row.extend((0..chans.len()).map(|c| {
            (r.temporal_matrix.column(c).iter().sum::<f64>() / score.window as f64).to_string()
        }));
        s += &csv_line(&row);
    }
    write_text(&dir.join("windows.csv"), &s)?;

    let mut s =
        String::from("channel,onset,offset,duration,severity,feature_excess,temporal_deficit\n");
    for e in events {
        s += &csv_line(&[
            e.channel.clone(),
            e.onset.to_string(),
            e.offset.to_string(),
            e.duration.to_string(),
            e.severity.to_string(),
            e.feature_excess.to_string(),
            e.temporal_deficit.to_string(),
        ]);
    }
    write_text(&dir.join("events.csv"), &s)?;
    score.flags.write_csv(&dir.join("flags.csv"), chans)?;

    let mut heatmaps = Vec::new();
    if options.heatmap_stride > 0 {
        for (i, (r, &start)) in score.reports.iter().zip(&score.starts).enumerate() {
            if start % options.heatmap_stride != 0 {
                continue;
            }
            let mut s = String::from("second,");
            s += &chans.join(",");
            s.push('\n');
            for t in 0..score.window {
                let mut row = vec![(start + t).to_string()];
                row.extend(r.temporal_matrix.row(t).iter().map(|v| v.to_string()));
                s += &csv_line(&row);
            }
            write_text(&heat_dir.join(format!("window_{i}.csv")), &s)?;
            write_text(
                &heat_dir.join(format!("window_{i}.svg")),
                &heatmap_svg(&r.temporal_matrix, chans, start),
            )?;
            heatmaps.push(i);
        }
    }

    let summary = ReportSummary {
        version: 1,
        frame_len: score.len(),
        window: score.window,
        windows: score.reports.len(),
        channels: chans
            .iter()
            .enumerate()
            .map(|(c, name)| ChannelSummary {
                channel: name.clone(),
                mean_feature_weight: fw[c],
                mean_temporal_weight: tw[c],
                flagged_seconds: score.flags.column_count(c),
            })
            .collect(),
        policy: *policy,
        baseline: baseline.clone(),
        events: events.to_vec(),
        heatmaps,
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::json("report summary", e))?;
    write_text(&dir.join("summary.json"), &(json + "\n"))?;
    Ok(summary)
}

/// Reads `events.csv` from a report bundle.
pub fn read_events_csv(path: &Path) -> Result<Vec<AnomalyEvent>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `attnae detect` to produce a report".into(),
            }
        }
        _ => Error::csv(path.display().to_string(), e),
    })?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::csv(path.display().to_string(), e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    fn names(f: usize) -> Vec<String> {
        (0..f).map(|i| format!("c{i}")).collect()
    }

    fn uniform_report(t: usize, f: usize) -> AttentionReport {
        AttentionReport {
            feature_weights: vec![1.0; f],
            temporal_matrix: Matrix::filled(t, f, 1.0 / f as f64),
            feature_scores: vec![0.0; f],
            temporal_scores: Matrix::zeros(t, f),
            context: vec![],
        }
    }

    fn baseline(f: usize, t: usize) -> BaselineStats {
        BaselineStats {
            channels: names(f),
            window: t,
            windows: 100,
            feature_mean: vec![1.0; f],
            feature_std: vec![0.05; f],
            temporal_mean: vec![1.0 / f as f64; f],
            temporal_std: vec![0.01; f],
        }
    }

    fn mask_from(rows: usize, on: &[(usize, usize)]) -> Mask {
        let mut m = Mask::new(rows, 1);
        for &(s, e) in on {
            for t in s..e {
                m.set(t, 0, true);
            }
        }
        m
    }

    #[test]
    fn baseline_stats_from_reports() {
        let mut reports = vec![uniform_report(4, 2); 100];
        reports[0].feature_weights = vec![1.2, 0.8];
        let b = baseline_from_reports(&reports, &names(2), 100).unwrap();
        assert!((b.feature_mean[0] - 1.002).abs() < 1e-12);
        assert!(b.feature_std[0] > 0.0);
        assert_eq!(b.temporal_std[0], 0.0);
        assert!(b.validate().is_err());
        assert!(baseline_from_reports(&reports[..99], &names(2), 100).is_err());
        let again = baseline_from_reports(&reports, &names(2), 100).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn zero_variance_baseline_is_rejected() {
        let mut b = baseline(2, 4);
        b.temporal_std = vec![0.0; 2];
        b.feature_std = vec![0.0; 2];
        let reports = vec![uniform_report(4, 2)];
        assert!(matches!(
            score_reports(reports, vec![0], 4, &b, &DetectionPolicy::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn depressed_channel_is_flagged_by_majority() {
        let (t, f, n) = (4, 2, 12);
        let starts: Vec<usize> = (0..=n - t).collect();
        let reports: Vec<AttentionReport> = starts
            .iter()
            .map(|&s| {
                let mut r = uniform_report(t, f);
                for k in 0..t {
                    if (5..8).contains(&(s + k)) {
                        r.temporal_matrix.set(k, 0, 0.1);
                        r.temporal_matrix.set(k, 1, 0.9);
                    }
                }
                r
            })
            .collect();
        let score = score_reports(
            reports,
            starts,
            n,
            &baseline(f, t),
            &DetectionPolicy::default(),
        )
        .unwrap();
        let flagged: Vec<usize> = (0..n).filter(|&s| score.flags.get(s, 0)).collect();
        assert_eq!(flagged, vec![5, 6, 7]);
        assert_eq!(score.flags.column_count(1), 0);
        assert!(score.temporal_z.get(6, 0) > 3.0);
    }

    #[test]
    fn segmentation_examples() {
        let p = DetectionPolicy::default();
        let ch = names(1);
        let ev = segment_events(&mask_from(300, &[(150, 200)]), &ch, &p, None).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].onset, ev[0].offset, ev[0].duration), (150, 200, 50));
        let ev = segment_events(&mask_from(30, &[(10, 12), (13, 20)]), &ch, &p, None).unwrap();
        assert_eq!((ev[0].onset, ev[0].offset), (10, 20));
        assert_eq!(ev.len(), 1);
        assert!(segment_events(&mask_from(30, &[(5, 6)]), &ch, &p, None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn accuracy_examples() {
        let ch = names(1);
        let truth = mask_from(300, &[(150, 200)]);
        let perfect = segment_events(&truth, &ch, &DetectionPolicy::default(), None).unwrap();
        let acc = localization_accuracy(&perfect, &truth, &ch, Some((145, 205))).unwrap();
        assert_eq!(acc.overall, 1.0);
        assert_eq!(acc.truth_events[0].iou, 1.0);

        let none = localization_accuracy(&[], &Mask::new(50, 1), &ch, None).unwrap();
        assert_eq!(none.overall, 1.0);
        assert_eq!(none.anomaly_overall, None);

        // First three and last two seconds missed.
        let late = mask_from(300, &[(153, 198)]);
        let ev = segment_events(&late, &ch, &DetectionPolicy::default(), None).unwrap();
        let acc = localization_accuracy(&ev, &truth, &ch, Some((100, 200))).unwrap();
        assert_eq!(acc.overall, 0.95);
        assert_eq!(acc.anomaly_overall, Some(0.9));
        assert_eq!(acc.per_channel[0].false_negative, 5);
        assert!((acc.truth_events[0].iou - 0.9).abs() < 1e-12);

        let long = AnomalyEvent {
            channel: "c0".into(),
            onset: 0,
            offset: 301,
            duration: 301,
            severity: 0.0,
            feature_excess: 0.0,
            temporal_deficit: 0.0,
        };
        assert!(localization_accuracy(&[long], &truth, &ch, None).is_err());
        assert!(localization_accuracy(&[], &truth, &ch, Some((10, 400))).is_err());
    }

    #[test]
    fn report_bundle_is_written_deterministically() {
        let (t, f, n) = (4, 2, 12);
        let starts: Vec<usize> = (0..=n - t).collect();
        let reports = vec![uniform_report(t, f); starts.len()];
        let b = baseline(f, t);
        let p = DetectionPolicy::default();
        let score = score_reports(reports, starts, n, &b, &p).unwrap();
        let events =
            segment_events(&score.flags, &score.channels, &p, Some((&score).into())).unwrap();
        assert!(events.is_empty());
        let opts = ReportOptions { heatmap_stride: 4 };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let s1 = emit_report(d1.path(), &score, &events, &b, &p, &opts).unwrap();
        emit_report(d2.path(), &score, &events, &b, &p, &opts).unwrap();
        assert_eq!(s1.heatmaps, vec![0, 4, 8]);
        for name in [
            "feature_weights.csv",
            "temporal_means.csv",
            "events.csv",
            "summary.json",
            "heatmaps/window_4.csv",
        ] {
            assert_eq!(
                std::fs::read(d1.path().join(name)).unwrap(),
                std::fs::read(d2.path().join(name)).unwrap()
            );
        }
        assert!(d1.path().join("heatmaps/window_8.svg").exists());
        let back = read_events_csv(&d1.path().join("events.csv")).unwrap();
        assert!(back.is_empty());
    }

    fn random_reports(
        t: usize,
        f: usize,
        n: usize,
        seed: u64,
    ) -> (Vec<AttentionReport>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let starts: Vec<usize> = (0..=n - t).collect();
        let reports = starts
            .iter()
            .map(|_| {
                let raw: Vec<f64> = (0..f).map(|_| rng.normal()).collect();
                let alpha = crate::numeric::softmax(&raw).unwrap();
                let mut m = Matrix::zeros(t, f);
                for k in 0..t {
                    let row: Vec<f64> = (0..f).map(|_| 0.5 * rng.normal()).collect();
                    m.row_mut(k)
                        .copy_from_slice(&crate::numeric::softmax(&row).unwrap());
                }
                AttentionReport {
                    feature_weights: alpha.iter().map(|a| a * f as f64).collect(),
                    temporal_matrix: m,
                    feature_scores: raw,
                    temporal_scores: Matrix::zeros(t, f),
                    context: vec![],
                }
            })
            .collect();
        (reports, starts)
    }

    proptest! {
        #[test]
        fn lowering_k_never_removes_flags(seed in 0u64..1000, k_hi in 1.0f64..4.0, drop in 0.0f64..0.9) {
            let (t, f, n) = (5, 3, 30);
            let (reports, starts) = random_reports(t, f, n, seed);
            let b = baseline_from_reports(&reports, &names(f), 1).unwrap();
            let hi = DetectionPolicy { k_feature: k_hi, k_temporal: k_hi, ..DetectionPolicy::default() };
            let lo = DetectionPolicy { k_feature: k_hi * (1.0 - drop), k_temporal: k_hi * (1.0 - drop), ..hi };
            let a = score_reports(reports.clone(), starts.clone(), n, &b, &hi).unwrap();
            let c = score_reports(reports, starts, n, &b, &lo).unwrap();
            for s in 0..n {
                for ch in 0..f {
                    prop_assert!(!a.flags.get(s, ch) || c.flags.get(s, ch));
                }
            }
        }

        #[test]
        fn segmentation_is_idempotent(bits in proptest::collection::vec(any::<bool>(), 1..80), gap in 0usize..4, min_len in 1usize..4) {
            let mut m = Mask::new(bits.len(), 1);
            for (i, &b) in bits.iter().enumerate() {
                m.set(i, 0, b);
            }
            let p = DetectionPolicy { hysteresis: gap, min_length: min_len, ..DetectionPolicy::default() };
            let ch = names(1);
            let first = segment_events(&m, &ch, &p, None).unwrap();
            let induced = events_to_mask(&first, bits.len(), &ch).unwrap();
            let second = segment_events(&induced, &ch, &p, None).unwrap();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn accuracy_is_bounded_and_exact_iff_match(
            truth_bits in proptest::collection::vec(any::<bool>(), 10..60),
            pred_bits in proptest::collection::vec(any::<bool>(), 60),
        ) {
            let n = truth_bits.len();
            let ch = names(1);
            let mut truth = Mask::new(n, 1);
            let mut pred = Mask::new(n, 1);
            for i in 0..n {
                truth.set(i, 0, truth_bits[i]);
                pred.set(i, 0, pred_bits[i]);
            }
            let loose = DetectionPolicy { hysteresis: 0, min_length: 1, ..DetectionPolicy::default() };
            let events = segment_events(&pred, &ch, &loose, None).unwrap();
            let acc = localization_accuracy(&events, &truth, &ch, None).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc.overall));
            let matches = (0..n).all(|i| truth_bits[i] == pred_bits[i]);
            prop_assert_eq!(acc.overall == 1.0, matches);
        }
    }
}
