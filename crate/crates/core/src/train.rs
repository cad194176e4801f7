//! Mini-batch training, denoising corruption, attention targets, tuning.
//!
//! Each training window is corrupted with some probability by step or ramp
//! offsets on a few channels; the model reconstructs the clean window. The
//! corruption indicator also supplies soft targets for both attention
//! branches (corrupted channels get more feature weight and less temporal
//! weight), added to the loss as small KL terms.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{windows_of, WindowBatch};
use crate::error::{Error, Result};
use crate::model::{Architecture, Mode, ModelParams, Upstream};
use crate::numeric::{adam_step, AdamState, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    /// Chance that a training window is corrupted at all.
    pub probability: f64,
    /// Offset magnitude range in multiples of the channel noise scale.
    pub min_sigmas: f64,
    pub max_sigmas: f64,
    /// Chance that a corruption spans the whole window.
    pub whole_window: f64,
    /// Offset, in noise scales, at which the indicator saturates at 1.
    pub indicator_sigmas: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            probability: 0.6,
            min_sigmas: 2.0,
            max_sigmas: 15.0,
            whole_window: 0.3,
            indicator_sigmas: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionTargets {
    pub feature_weight: f64,
    pub temporal_weight: f64,
    /// Softmax gain on the per-channel mean indicator.
    pub feature_sharpness: f64,
    /// Softmax gain (negated) on the per-cell indicator.
    pub temporal_sharpness: f64,
}

impl Default for AttentionTargets {
    fn default() -> Self {
        AttentionTargets {
            feature_weight: 0.01,
            temporal_weight: 0.05,
            feature_sharpness: 2.0,
            temporal_sharpness: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub window: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub bottleneck: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub attention: usize,
    pub embedding: usize,
    pub context: usize,
    /// Early-stopping patience in epochs; `None` trains every epoch.
    pub patience: Option<usize>,
    /// Epochs before early stopping may trigger.
    pub patience_warmup: usize,
    pub clip_norm: f64,
    pub corruption: CorruptionConfig,
    pub targets: AttentionTargets,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.006,
            batch_size: 32,
            window: 20,
            hidden1: 64,
            hidden2: 32,
            bottleneck: 64,
            dropout: 0.06,
            epochs: 30,
            seed: 0,
            attention: 32,
            embedding: 8,
            context: 32,
            patience: Some(5),
            patience_warmup: 15,
            clip_norm: 5.0,
            corruption: CorruptionConfig::default(),
            targets: AttentionTargets::default(),
        }
    }
}

impl Hyperparams {
    pub fn architecture(&self, features: usize) -> Architecture {
        Architecture {
            window: self.window,
            features,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            bottleneck: self.bottleneck,
            attention: self.attention,
            embedding: self.embedding,
            context: self.context,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::domain("batch size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::domain(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::domain("clip norm must be positive"));
        }
        let c = self.corruption;
        if !(0.0..=1.0).contains(&c.probability)
            || !(0.0 < c.min_sigmas && c.min_sigmas <= c.max_sigmas)
        {
            return Err(Error::domain("invalid corruption settings"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    /// Mean reconstruction MSE over each epoch's (corrupted) batches.
    pub train_loss: Vec<f64>,
    /// Clean reconstruction MSE on the validation windows.
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Equality of everything except the wall-clock time.
    pub fn same_curves(&self, other: &TrainReport) -> bool {
        self.initial_val_loss.to_bits() == other.initial_val_loss.to_bits()
            && self.train_loss == other.train_loss
            && self.val_loss == other.val_loss
            && self.best_epoch == other.best_epoch
            && self.stopped_early == other.stopped_early
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            s.push_str(&format!("{},{t},{v}\n", e + 1));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    /// Robust per-channel noise scale of the scaled training data.
    pub noise_scale: Vec<f64>,
    pub report: TrainReport,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-channel noise from first differences: `MAD / 0.6745 / √2`, using the
/// first step of every window.
pub fn noise_scale(windows: &[Matrix]) -> Vec<f64> {
    let cols = windows[0].cols();
    (0..cols)
        .map(|c| {
            let mut d: Vec<f64> = windows.iter().map(|w| w.get(1, c) - w.get(0, c)).collect();
            let m = median(&mut d);
            let mut dev: Vec<f64> = d.iter().map(|x| (x - m).abs()).collect();
            median(&mut dev) / 0.6745 / std::f64::consts::SQRT_2 + 1e-6
        })
        .collect()
}

/// Corrupts a window in place; returns the `T × F` indicator in `[0, 1]`,
/// or `None` when the window was left clean.
fn corrupt(
    window: &mut Matrix,
    noise: &[f64],
    cfg: &CorruptionConfig,
    rng: &mut Rng,
) -> Option<Matrix> {
    if !(rng.uniform() < cfg.probability) {
        return None;
    }
    let (t_len, nf) = window.shape();
    let clean = window.clone();
    let count = (1 + usize::from(rng.uniform() < 0.4) + usize::from(rng.uniform() < 0.2)).min(nf);
    let mut channels: Vec<usize> = (0..nf).collect();
    rng.shuffle(&mut channels);
    for &f in &channels[..count] {
        let mut start = rng.below(t_len);
        let mut len = (1 + rng.below(t_len)).min(t_len - start);
        let mut mag = rng.uniform_range(cfg.min_sigmas, cfg.max_sigmas) * noise[f];
        if rng.uniform() < cfg.whole_window {
            start = 0;
            len = t_len;
        }
        if rng.uniform() < 0.5 {
            mag = -mag;
        }
        let ramp = rng.uniform() < 0.5;
        for k in 0..len {
            let off = if ramp {
                mag * (k + 1) as f64 / len as f64
            } else {
                mag
            };
            let t = start + k;
            window.set(t, f, window.get(t, f) + off);
        }
    }
    let mut ind = Matrix::zeros(t_len, nf);
    for t in 0..t_len {
        for f in 0..nf {
            let v = window.get(t, f).clamp(0.0, 1.0);
            window.set(t, f, v);
            let m = (v - clean.get(t, f)).abs() / (cfg.indicator_sigmas * noise[f]);
            ind.set(t, f, m.min(1.0));
        }
    }
    Some(ind)
}

fn softmax_scaled(v: &[f64], gain: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| gain * x).collect();
    crate::numeric::softmax_in_place(&mut out);
    out
}

/// Batch gradients for the attention-target terms. Returns the loss value
/// and fills the upstream gradients on α and `A`.
fn target_terms(
    reports: &[crate::attention::AttentionReport],
    indicators: &[Option<Matrix>],
    cfg: &AttentionTargets,
    d_alpha: &mut Vec<Vec<f64>>,
    d_temporal: &mut Vec<Matrix>,
) -> f64 {
    let batch = reports.len() as f64;
    let mut loss = 0.0;
    d_alpha.clear();
    d_temporal.clear();
    for (r, ind) in reports.iter().zip(indicators) {
        let nf = r.feature_weights.len();
        let (t_len, _) = r.temporal_matrix.shape();
        let alpha: Vec<f64> = r.feature_weights.iter().map(|w| w / nf as f64).collect();
        let feat_target = match ind {
            Some(m) => {
                let mean: Vec<f64> = (0..nf)
                    .map(|f| m.column(f).iter().sum::<f64>() / t_len as f64)
                    .collect();
                softmax_scaled(&mean, cfg.feature_sharpness)
            }
            None => vec![1.0 / nf as f64; nf],
        };
        let kf = cfg.feature_weight / batch;
        let mut da = vec![0.0; nf];
        for f in 0..nf {
            let p = feat_target[f];
            loss += kf * p * (p.ln() - alpha[f].ln());
            da[f] = -kf * p / alpha[f];
        }
        d_alpha.push(da);

        let kt = cfg.temporal_weight / (batch * t_len as f64);
        let mut dt = Matrix::zeros(t_len, nf);
        for t in 0..t_len {
            let target = match ind {
                Some(m) => softmax_scaled(m.row(t), -cfg.temporal_sharpness),
                None => vec![1.0 / nf as f64; nf],
            };
            for f in 0..nf {
                let (p, a) = (target[f], r.temporal_matrix.get(t, f));
                loss += kt * p * (p.ln() - a.ln());
                dt.set(t, f, -kt * p / a);
            }
        }
        d_temporal.push(dt);
    }
    loss
}

/// Clean reconstruction MSE averaged over all windows.
pub fn evaluate_mse(model: &ModelParams, windows: &[Matrix]) -> Result<f64> {
    let mut rng = Rng::new(0);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(256) {
        let out = model.forward_batch(chunk, Mode::Infer, &mut rng)?;
        for (r, w) in out.reconstructions.iter().zip(chunk) {
            total += r
                .data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += r.data().len();
        }
    }
    let mse = total / count as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok(mse)
}

fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .map(|(_, t)| t.sum_sq())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.scale(s);
        }
    }
    norm
}

/// Wall clock for reports; wasm32 without a host clock reports zero.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

pub fn train(
    train_windows: &WindowBatch,
    val_windows: &WindowBatch,
    hp: &Hyperparams,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::domain(
            "training and validation windows must be nonempty",
        ));
    }
    let features = train_windows.windows[0].cols();
    let arch = hp.architecture(features);
    for w in train_windows.windows.iter().chain(&val_windows.windows) {
        if w.shape() != (arch.window, features) {
            return Err(Error::Shape {
                op: "training window",
                left: w.shape(),
                right: (arch.window, features),
            });
        }
    }
    let started = Stopwatch::start();
    let mut model = ModelParams::new(arch, hp.dropout, &mut Rng::derived(hp.seed, 1))?;
    let mut shuffle_rng = Rng::derived(hp.seed, 2);
    let mut dropout_rng = Rng::derived(hp.seed, 3);
    let mut corrupt_rng = Rng::derived(hp.seed, 4);
    let noise = noise_scale(&train_windows.windows);

    let mut states: Vec<AdamState> = model
        .tensors()
        .iter()
        .map(|(_, t)| AdamState::for_param(t, hp.learning_rate))
        .collect();

    let initial_val_loss = evaluate_mse(&model, &val_windows.windows)?;
    let mut report = TrainReport {
        initial_val_loss,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        wall_time_secs: 0.0,
    };
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut d_alpha = Vec::new();
    let mut d_temporal = Vec::new();
    let per_window = (arch.window * features) as f64;

    for epoch in 0..hp.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_sse = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            let clean: Vec<&Matrix> = chunk.iter().map(|&i| &train_windows.windows[i]).collect();
            let mut inputs: Vec<Matrix> = clean.iter().map(|w| (*w).clone()).collect();
            let indicators: Vec<Option<Matrix>> = inputs
                .iter_mut()
                .map(|w| corrupt(w, &noise, &hp.corruption, &mut corrupt_rng))
                .collect();
            let fwd = model.forward_batch(&inputs, Mode::Train, &mut dropout_rng)?;
            let scale = 2.0 / (chunk.len() as f64 * per_window);
            let mut d_recon = Vec::with_capacity(chunk.len());
            for (r, c) in fwd.reconstructions.iter().zip(&clean) {
                let mut d = r.clone();
                for (v, t) in d.data_mut().iter_mut().zip(c.data()) {
                    let e = *v - t;
                    epoch_sse += e * e;
                    *v = scale * e;
                }
                d_recon.push(d);
            }
            target_terms(
                &fwd.reports,
                &indicators,
                &hp.targets,
                &mut d_alpha,
                &mut d_temporal,
            );
            let mut grads = model.backward(
                &fwd,
                &Upstream {
                    reconstruction: &d_recon,
                    alpha: Some(&d_alpha),
                    temporal: Some(&d_temporal),
                },
            )?;
            clip_global_norm(&mut grads, hp.clip_norm);
            for (((_, p), (_, g)), st) in model
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(&mut states)
            {
                adam_step(p, g, st)?;
            }
        }
        let train_loss = epoch_sse / (train_windows.len() as f64 * per_window);
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {}",
                epoch + 1
            )));
        }
        let val = evaluate_mse(&model, &val_windows.windows)?;
        info!("epoch {}: train {train_loss:.6} val {val:.6}", epoch + 1);
        report.train_loss.push(train_loss);
        report.val_loss.push(val);
        if val < best.0 {
            best = (val, model.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if epoch + 1 >= hp.patience_warmup && hp.patience.is_some_and(|p| since_best >= p) {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.wall_time_secs = started.seconds();
    Ok(TrainOutcome {
        model: best.1,
        noise_scale: noise,
        report,
    })
}

/// Candidate values per hyperparameter; the space is their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub window: Vec<usize>,
    pub hidden1: Vec<usize>,
    pub hidden2: Vec<usize>,
    pub bottleneck: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: vec![0.001, 0.003, 0.006, 0.01],
            batch_size: vec![16, 32, 64],
            window: vec![10, 20],
            hidden1: vec![32, 64],
            hidden2: vec![16, 32],
            bottleneck: vec![32, 64],
            dropout: vec![0.0, 0.06, 0.2],
        }
    }
}

impl SearchSpace {
    pub fn single(hp: &Hyperparams) -> Self {
        SearchSpace {
            learning_rate: vec![hp.learning_rate],
            batch_size: vec![hp.batch_size],
            window: vec![hp.window],
            hidden1: vec![hp.hidden1],
            hidden2: vec![hp.hidden2],
            bottleneck: vec![hp.bottleneck],
            dropout: vec![hp.dropout],
        }
    }

    fn radices(&self) -> [usize; 7] {
        [
            self.learning_rate.len(),
            self.batch_size.len(),
            self.window.len(),
            self.hidden1.len(),
            self.hidden2.len(),
            self.bottleneck.len(),
            self.dropout.len(),
        ]
    }

    pub fn size(&self) -> usize {
        self.radices().iter().product()
    }

    /// The `index`-th point (mixed radix, learning rate fastest) applied to `base`.
    pub fn point(&self, index: usize, base: &Hyperparams) -> Hyperparams {
        let mut i = index;
        let mut digit = |n: usize| {
            let d = i % n;
            i /= n;
            d
        };
        let r = self.radices();
        let mut hp = base.clone();
        hp.learning_rate = self.learning_rate[digit(r[0])];
        hp.batch_size = self.batch_size[digit(r[1])];
        hp.window = self.window[digit(r[2])];
        hp.hidden1 = self.hidden1[digit(r[3])];
        hp.hidden2 = self.hidden2[digit(r[4])];
        hp.bottleneck = self.bottleneck[digit(r[5])];
        hp.dropout = self.dropout[digit(r[6])];
        hp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub space_index: usize,
    pub hyperparams: Hyperparams,
    pub final_val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: Hyperparams,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

impl TuneOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "trial,space_index,learning_rate,batch_size,window,hidden1,hidden2,bottleneck,dropout,final_val_loss,best_val_loss\n",
        );
        for t in &self.trials {
            let h = &t.hyperparams;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                t.trial,
                t.space_index,
                h.learning_rate,
                h.batch_size,
                h.window,
                h.hidden1,
                h.hidden2,
                h.bottleneck,
                h.dropout,
                t.final_val_loss,
                t.best_val_loss
            ));
        }
        s
    }
}

/// Random search: `trials` distinct points of `space` (all of them when the
/// space is smaller), each trained for `epochs` epochs without early
/// stopping on windows cut from the scaled train/validation rows. The
/// winner minimizes the final validation MSE.
pub fn tune(
    space: &SearchSpace,
    base: &Hyperparams,
    trials: usize,
    epochs: usize,
    seed: u64,
    train_rows: &Matrix,
    val_rows: &Matrix,
) -> Result<TuneOutcome> {
    let size = space.size();
    if size == 0 {
        return Err(Error::domain("search space has an empty dimension"));
    }
    if trials == 0 {
        return Err(Error::domain("at least one trial is required"));
    }
    let mut rng = Rng::derived(seed, 5);
    let picks: Vec<usize> = if size <= 1 << 20 {
        let mut all: Vec<usize> = (0..size).collect();
        rng.shuffle(&mut all);
        all.truncate(trials);
        all
    } else {
        let mut seen = indexmap::IndexSet::new();
        while seen.len() < trials {
            seen.insert(rng.below(size));
        }
        seen.into_iter().collect()
    };

    let mut records = Vec::with_capacity(picks.len());
    for (trial, &index) in picks.iter().enumerate() {
        let mut hp = space.point(index, base);
        hp.epochs = epochs;
        hp.patience = None;
        hp.seed = Rng::derived(seed, 100 + trial as u64).next_u64();
        let tw = windows_of(train_rows, hp.window, 1)?;
        let vw = windows_of(val_rows, hp.window, 1)?;
        let out = train(&tw, &vw, &hp)?;
        let final_val_loss = *out.report.val_loss.last().expect("at least one epoch");
        let best_val_loss = out
            .report
            .val_loss
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        info!("trial {trial}: point {index} final val {final_val_loss:.6}");
        records.push(TrialRecord {
            trial,
            space_index: index,
            hyperparams: hp,
            final_val_loss,
            best_val_loss,
        });
    }
    let best_trial = records
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.final_val_loss.total_cmp(&b.1.final_val_loss))
        .map(|(i, _)| i)
        .expect("nonempty trials");
    Ok(TuneOutcome {
        best: records[best_trial].hyperparams.clone(),
        best_trial,
        trials: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hp() -> Hyperparams {
        Hyperparams {
            window: 5,
            hidden1: 6,
            hidden2: 4,
            bottleneck: 5,
            attention: 4,
            embedding: 3,
            context: 4,
            batch_size: 8,
            learning_rate: 0.01,
            epochs: 5,
            ..Hyperparams::default()
        }
    }

    fn constant_batch(n: usize) -> WindowBatch {
        let w = Matrix::filled(5, 3, 0.5);
        WindowBatch {
            windows: vec![w; n],
            starts: (0..n).collect(),
            window: 5,
            frame_len: n + 4,
        }
    }

    #[test]
    fn learns_a_constant_window() {
        let b = constant_batch(40);
        let mut hp = tiny_hp();
        hp.corruption.probability = 0.0;
        hp.epochs = 1;
        let one = train(&b, &b, &hp).unwrap();
        assert!(one.report.val_loss[0] < one.report.initial_val_loss);
        hp.epochs = 5;
        hp.patience = None;
        let five = train(&b, &b, &hp).unwrap();
        assert!(five.report.train_loss[4] < five.report.train_loss[0]);
        assert_eq!(five.report.train_loss.len(), five.report.val_loss.len());
    }

    #[test]
    fn same_seed_same_run() {
        let mut rng = Rng::new(3);
        let rows = Matrix::uniform(60, 3, 0.5, &mut rng).map(|v| v + 0.5);
        let b = windows_of(&rows, 5, 1).unwrap();
        let hp = tiny_hp();
        let a = train(&b, &b, &hp).unwrap();
        let c = train(&b, &b, &hp).unwrap();
        assert!(a.report.same_curves(&c.report));
        assert_eq!(a.model, c.model);
        assert!(a
            .report
            .train_loss
            .iter()
            .chain(&a.report.val_loss)
            .all(|v| v.is_finite()));
    }

    #[test]
    fn empty_data_is_rejected() {
        let b = constant_batch(4);
        let empty = WindowBatch {
            windows: vec![],
            starts: vec![],
            window: 5,
            frame_len: 0,
        };
        assert!(matches!(
            train(&empty, &b, &tiny_hp()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn corruption_indicator_marks_changes() {
        let cfg = CorruptionConfig {
            probability: 1.0,
            ..CorruptionConfig::default()
        };
        let noise = vec![0.01; 4];
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let clean = Matrix::filled(10, 4, 0.5);
            let mut w = clean.clone();
            let ind = corrupt(&mut w, &noise, &cfg, &mut rng).unwrap();
            for t in 0..10 {
                for f in 0..4 {
                    let changed = w.get(t, f) != clean.get(t, f);
                    assert_eq!(changed, ind.get(t, f) > 0.0);
                    assert!((0.0..=1.0).contains(&w.get(t, f)));
                }
            }
            assert!(ind.data().iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn noise_scale_of_white_noise() {
        let mut rng = Rng::new(8);
        let rows =
            Matrix::from_vec(4001, 1, (0..4001).map(|_| 0.05 * rng.normal()).collect()).unwrap();
        let b = windows_of(&rows, 3, 1).unwrap();
        let s = noise_scale(&b.windows)[0];
        assert!((s - 0.05).abs() < 0.003, "{s}");
    }

    #[test]
    fn search_space_points_are_distinct() {
        let space = SearchSpace::default();
        let base = Hyperparams::default();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..space.size() {
            let p = space.point(i, &base);
            seen.insert(format!("{p:?}"));
        }
        assert_eq!(seen.len(), space.size());
    }

    #[test]
    fn tune_single_point_and_argmin() {
        let mut rng = Rng::new(1);
        let rows = Matrix::uniform(80, 3, 0.3, &mut rng).map(|v| v + 0.5);
        let hp = tiny_hp();
        let one = tune(&SearchSpace::single(&hp), &hp, 5, 1, 7, &rows, &rows).unwrap();
        assert_eq!(one.trials.len(), 1);
        assert_eq!(one.best.learning_rate, hp.learning_rate);

        let mut space = SearchSpace::single(&hp);
        space.learning_rate = vec![0.001, 0.01, 0.03];
        let a = tune(&space, &hp, 2, 1, 9, &rows, &rows).unwrap();
        let b = tune(&space, &hp, 2, 1, 9, &rows, &rows).unwrap();
        assert_eq!(a, b);
        let min = a
            .trials
            .iter()
            .map(|t| t.final_val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.trials[a.best_trial].final_val_loss, min);
        assert_ne!(a.trials[0].space_index, a.trials[1].space_index);
    }
}
