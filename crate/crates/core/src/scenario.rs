//! Synthetic reactor-like telemetry and anomaly injection.
//!
//! Power follows a piecewise ramp/hold trajectory. Neutron counts track it
//! with multiplicative noise, flux is percent power plus noise, ram_pool is
//! log-coupled to the counts, and the other three monitors sit on their own
//! baselines with a weak coupling term.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{ChannelBounds, Mask, ScalerBounds, SignalFrame, CHANNELS};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Ramp {
        to: f64,
        duration: usize,
    },
    Hold {
        duration: usize,
    },
    /// Power drops to zero at once and stays there.
    Shutdown {
        duration: usize,
    },
}

impl Segment {
    pub fn duration(&self) -> usize {
        match *self {
            Segment::Ramp { duration, .. }
            | Segment::Hold { duration }
            | Segment::Shutdown { duration } => duration,
        }
    }
}

/// Per-channel noise standard deviations (counts noise is relative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseScales {
    pub ram_pool: f64,
    pub ram_wtr: f64,
    pub ram_con: f64,
    pub cam: f64,
    pub counts_relative: f64,
    pub flux: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            ram_pool: 0.06,
            ram_wtr: 0.02,
            ram_con: 0.01,
            cam: 0.03,
            counts_relative: 0.02,
            flux: 0.3,
        }
    }
}

impl NoiseScales {
    pub fn zero() -> Self {
        NoiseScales {
            ram_pool: 0.0,
            ram_wtr: 0.0,
            ram_con: 0.0,
            cam: 0.0,
            counts_relative: 0.0,
            flux: 0.0,
        }
    }

    /// Noise of a radiation channel by name; `None` for the neutron channels.
    pub fn radiation(&self, channel: &str) -> Option<f64> {
        match channel {
            "ram_pool" => Some(self.ram_pool),
            "ram_wtr" => Some(self.ram_wtr),
            "ram_con" => Some(self.ram_con),
            "cam" => Some(self.cam),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Baselines {
    pub ram_pool: f64,
    pub ram_wtr: f64,
    pub ram_con: f64,
    pub cam: f64,
}

impl Default for Baselines {
    fn default() -> Self {
        Baselines {
            ram_pool: 0.5,
            ram_wtr: 0.8,
            ram_con: 0.3,
            cam: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationProfile {
    /// Power level (fraction of full power) before the first segment.
    #[serde(default)]
    pub start_level: f64,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub noise: NoiseScales,
    #[serde(default)]
    pub baselines: Baselines,
    /// ram_pool gain on `log10(1 + counts)`.
    #[serde(default = "default_pool_gain")]
    pub pool_gain: f64,
    /// Relative coupling of the other monitors to `log10(1 + counts)`.
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default = "default_full_power_counts")]
    pub full_power_counts: f64,
    #[serde(default = "default_background_counts")]
    pub background_counts: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_pool_gain() -> f64 {
    0.3
}
fn default_coupling() -> f64 {
    0.02
}
fn default_full_power_counts() -> f64 {
    5e4
}
fn default_background_counts() -> f64 {
    5.0
}

impl OperationProfile {
    fn with_segments(start_level: f64, segments: Vec<Segment>, seed: u64) -> Self {
        OperationProfile {
            start_level,
            segments,
            noise: NoiseScales::default(),
            baselines: Baselines::default(),
            pool_gain: default_pool_gain(),
            coupling: default_coupling(),
            full_power_counts: default_full_power_counts(),
            background_counts: default_background_counts(),
            seed,
        }
    }

    /// 300 s evaluation profile: hold at 40 %, ramp to 70 %, hold.
    pub fn test(seed: u64) -> Self {
        Self::with_segments(
            0.4,
            vec![
                Segment::Hold { duration: 160 },
                Segment::Ramp {
                    to: 0.7,
                    duration: 40,
                },
                Segment::Hold { duration: 100 },
            ],
            seed,
        )
    }

    /// 900 s of normal operation at several levels, for baseline statistics.
    pub fn calibration(seed: u64) -> Self {
        Self::with_segments(
            0.4,
            vec![
                Segment::Hold { duration: 160 },
                Segment::Ramp {
                    to: 0.7,
                    duration: 40,
                },
                Segment::Hold { duration: 100 },
                Segment::Ramp {
                    to: 0.6,
                    duration: 20,
                },
                Segment::Hold { duration: 280 },
                Segment::Ramp {
                    to: 0.2,
                    duration: 40,
                },
                Segment::Hold { duration: 260 },
            ],
            seed,
        )
    }

    /// Random startup/hold/partial-ramp-down/shutdown cycles covering at
    /// least `min_duration` seconds.
    pub fn training(seed: u64, min_duration: usize) -> Self {
        let mut rng = Rng::derived(seed, 11);
        let mut segments = Vec::new();
        let mut total = 0;
        while total < min_duration {
            let level = rng.uniform_range(0.1, 1.0);
            let cycle = [
                Segment::Ramp {
                    to: level,
                    duration: 60 + rng.below(140),
                },
                Segment::Hold {
                    duration: 100 + rng.below(300),
                },
                Segment::Ramp {
                    to: rng.uniform_range(0.05, level),
                    duration: 30 + rng.below(90),
                },
                Segment::Hold {
                    duration: 50 + rng.below(150),
                },
                Segment::Ramp {
                    to: 0.0,
                    duration: 30 + rng.below(70),
                },
                Segment::Hold {
                    duration: 30 + rng.below(90),
                },
            ];
            for s in cycle {
                total += s.duration();
                segments.push(s);
            }
        }
        Self::with_segments(0.0, segments, seed)
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "default" | "test" => Ok(Self::test(seed)),
            "calibration" => Ok(Self::calibration(seed)),
            "training" => Ok(Self::training(seed, 3200)),
            "training-full" => Ok(Self::training(seed, 50_000)),
            other => Err(Error::Usage(format!(
                "unknown profile preset `{other}` (expected default, calibration, training, training-full)"
            ))),
        }
    }

    pub fn duration(&self) -> usize {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration() == 0 {
            return Err(Error::domain("profile has zero total duration"));
        }
        let levels =
            std::iter::once(self.start_level).chain(self.segments.iter().filter_map(|s| match s {
                Segment::Ramp { to, .. } => Some(*to),
                _ => None,
            }));
        for l in levels {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::domain(format!(
                    "power level {l} must be finite and non-negative"
                )));
            }
        }
        let n = self.noise;
        let scales = [
            n.ram_pool,
            n.ram_wtr,
            n.ram_con,
            n.cam,
            n.counts_relative,
            n.flux,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::domain(
                "noise scales must be finite and non-negative",
            ));
        }
        if !(self.full_power_counts > 0.0 && self.background_counts >= 0.0) {
            return Err(Error::domain("count levels must be positive"));
        }
        Ok(())
    }

    /// Power fraction at every second.
    pub fn power(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.duration());
        let mut level = self.start_level;
        for s in &self.segments {
            match *s {
                Segment::Ramp { to, duration } => {
                    for k in 0..duration {
                        p.push(level + (to - level) * (k + 1) as f64 / duration as f64);
                    }
                    if duration > 0 {
                        level = to;
                    }
                }
                Segment::Hold { duration } => p.extend(std::iter::repeat_n(level, duration)),
                Segment::Shutdown { duration } => {
                    level = 0.0;
                    p.extend(std::iter::repeat_n(0.0, duration));
                }
            }
        }
        p
    }

    /// Bounds that contain normal output of this profile family with margin:
    /// full-scale counts are 110 % of nominal and noise bands are ±[`BOUND_MARGIN_SIGMAS`]σ.
    pub fn bounds(&self) -> ScalerBounds {
        let top = self.full_power_counts * 1.1;
        let log_top = (1.0 + top).log10();
        let (b, n) = (self.baselines, self.noise);
        let pool = ChannelBounds {
            min: b.ram_pool + self.pool_gain * (1.0 + 0.5 * self.background_counts).log10()
                - BOUND_MARGIN_SIGMAS * n.ram_pool,
            max: b.ram_pool + self.pool_gain * log_top + BOUND_MARGIN_SIGMAS * n.ram_pool,
        };
        let ram = |base: f64, sigma: f64| ChannelBounds {
            min: base - BOUND_MARGIN_SIGMAS * sigma,
            max: base * (1.0 + self.coupling * log_top) + BOUND_MARGIN_SIGMAS * sigma,
        };
        let flux_margin = (BOUND_MARGIN_SIGMAS * n.flux).max(2.0);
        let list = [
            pool,
            ram(b.ram_wtr, n.ram_wtr),
            ram(b.ram_con, n.ram_con),
            ram(b.cam, n.cam),
            ChannelBounds { min: 0.0, max: top },
            ChannelBounds {
                min: -flux_margin,
                max: 110.0,
            },
        ];
        ScalerBounds {
            provenance: "synthetic generator envelope: 110% full-scale counts, ±6σ noise bands"
                .into(),
            channels: CHANNELS.iter().map(|c| c.to_string()).zip(list).collect(),
        }
    }
}

/// Normal telemetry for `profile` (all-false mask) plus matching bounds.
pub fn gen_normal(profile: &OperationProfile) -> Result<(SignalFrame, ScalerBounds)> {
    profile.validate()?;
    let power = profile.power();
    let n = power.len();
    let mut rng = Rng::new(profile.seed);
    let mut draw = |sigma: f64| -> Vec<f64> { (0..n).map(|_| sigma * rng.normal()).collect() };
    let ns = profile.noise;
    let counts_noise = draw(ns.counts_relative);
    let flux_noise = draw(ns.flux);
    let pool_noise = draw(ns.ram_pool);
    let others = [
        (profile.baselines.ram_wtr, draw(ns.ram_wtr)),
        (profile.baselines.ram_con, draw(ns.ram_con)),
        (profile.baselines.cam, draw(ns.cam)),
    ];

    let mut values = Matrix::zeros(n, CHANNELS.len());
    for t in 0..n {
        let counts = ((profile.background_counts + profile.full_power_counts * power[t])
            * (1.0 + counts_noise[t]))
            .max(0.0);
        let lc = (1.0 + counts).log10();
        let row = values.row_mut(t);
        row[0] = profile.baselines.ram_pool + profile.pool_gain * lc + pool_noise[t];
        for (k, (base, noise)) in others.iter().enumerate() {
            row[1 + k] = base + profile.coupling * lc * base + noise[t];
        }
        row[4] = counts;
        row[5] = 100.0 * power[t] + flux_noise[t];
    }
    let mut frame = SignalFrame::standard(values)?;
    frame.mask = Some(Mask::new(n, CHANNELS.len()));
    Ok((frame, profile.bounds()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Drift,
    Spike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftShape {
    #[default]
    Linear,
    Quadratic,
}

fn default_edge() -> usize {
    1
}

/// One falsification. For drifts `amplitude` is the coefficient `a` in
/// `a·k` (linear) or `a·k²` (quadratic), `k = t − start`; for spikes it is
/// the plateau height. Amplitudes are in raw channel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub kind: InjectionKind,
    pub channel: String,
    pub start: usize,
    pub duration: usize,
    pub amplitude: f64,
    #[serde(default)]
    pub shape: DriftShape,
    /// Spike edge ramp length in samples; 0 gives hard steps.
    #[serde(default = "default_edge")]
    pub edge: usize,
}

impl InjectionSpec {
    pub fn drift(channel: &str, start: usize, duration: usize, slope: f64) -> Self {
        InjectionSpec {
            kind: InjectionKind::Drift,
            channel: channel.into(),
            start,
            duration,
            amplitude: slope,
            shape: DriftShape::Linear,
            edge: default_edge(),
        }
    }

    pub fn spike(channel: &str, start: usize, duration: usize, amplitude: f64) -> Self {
        InjectionSpec {
            kind: InjectionKind::Spike,
            channel: channel.into(),
            start,
            duration,
            amplitude,
            shape: DriftShape::Linear,
            edge: default_edge(),
        }
    }

    fn check(&self, frame: &SignalFrame) -> Result<usize> {
        let c = frame.channel_index(&self.channel)?;
        if self.duration == 0 || self.start + self.duration > frame.len() {
            return Err(Error::domain(format!(
                "injection [{}, {}) on `{}` does not fit a frame of {} rows",
                self.start,
                self.start + self.duration,
                self.channel,
                frame.len()
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::domain("injection amplitude must be finite"));
        }
        Ok(c)
    }

    /// Offset added at position `k` of the injected range.
    fn offset(&self, k: usize) -> f64 {
        match self.kind {
            InjectionKind::Drift => match self.shape {
                DriftShape::Linear => self.amplitude * k as f64,
                DriftShape::Quadratic => self.amplitude * (k * k) as f64,
            },
            InjectionKind::Spike => {
                let from_edge = k.min(self.duration - 1 - k);
                if self.edge == 0 || self.duration <= 2 * self.edge || from_edge >= self.edge {
                    self.amplitude
                } else {
                    self.amplitude * (from_edge + 1) as f64 / (self.edge + 1) as f64
                }
            }
        }
    }
}

/// A falsified frame and the union of its ground-truth masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub frame: SignalFrame,
    pub mask: Mask,
}

fn apply(frame: &SignalFrame, spec: &InjectionSpec, c: usize) -> Injected {
    let mut out = frame.clone();
    let mut mask = frame
        .mask
        .clone()
        .unwrap_or_else(|| Mask::new(frame.len(), frame.channels.len()));
    for k in 0..spec.duration {
        let t = spec.start + k;
        out.values
            .set(t, c, frame.values.get(t, c) + spec.offset(k));
        mask.set(t, c, true);
    }
    out.mask = Some(mask.clone());
    Injected { frame: out, mask }
}

fn expect_kind(spec: &InjectionSpec, kind: InjectionKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::domain(format!(
            "expected a {kind:?} spec, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

pub fn inject_drift(frame: &SignalFrame, spec: &InjectionSpec) -> Result<Injected> {
    expect_kind(spec, InjectionKind::Drift)?;
    let c = spec.check(frame)?;
    if spec.amplitude == 0.0 {
        warn!(
            "drift on `{}` has zero amplitude; frame is unchanged",
            spec.channel
        );
    }
    Ok(apply(frame, spec, c))
}

pub fn inject_spike(frame: &SignalFrame, spec: &InjectionSpec) -> Result<Injected> {
    expect_kind(spec, InjectionKind::Spike)?;
    let c = spec.check(frame)?;
    Ok(apply(frame, spec, c))
}

/// Applies every spec in order after validating all of them.
pub fn inject_multi(frame: &SignalFrame, specs: &[InjectionSpec]) -> Result<Injected> {
    let cols = specs
        .iter()
        .map(|s| s.check(frame))
        .collect::<Result<Vec<_>>>()?;
    let mut cur = Injected {
        mask: frame
            .mask
            .clone()
            .unwrap_or_else(|| Mask::new(frame.len(), frame.channels.len())),
        frame: frame.clone(),
    };
    cur.frame.mask = Some(cur.mask.clone());
    for (spec, c) in specs.iter().zip(cols) {
        cur = apply(&cur.frame, spec, c);
    }
    Ok(cur)
}

/// The three reference falsification layouts for a 300 s test frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Drift,
    Spike,
    Concurrent,
}

/// Spike amplitude of the reference layouts, in channel noise scales.
pub const REFERENCE_SIGMAS: f64 = 8.0;
/// Final offset of the reference drift, in noise scales; it crosses 3σ at
/// mid-frame.
pub const DRIFT_END_SIGMAS: f64 = 6.0;

/// Noise-band margin of [`OperationProfile::bounds`]. Injections beyond it
/// are clamped when scaled.
pub const BOUND_MARGIN_SIGMAS: f64 = 6.0;

impl Reference {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "drift" => Ok(Reference::Drift),
            "spike" => Ok(Reference::Spike),
            "concurrent" => Ok(Reference::Concurrent),
            other => Err(Error::Usage(format!(
                "unknown scenario `{other}` (expected drift, spike, concurrent)"
            ))),
        }
    }

    /// Specs scaled by the profile's noise. The drift reaches
    /// `DRIFT_END_SIGMAS`σ at the last sample of a `len`-row frame.
    pub fn specs(&self, noise: &NoiseScales, len: usize) -> Vec<InjectionSpec> {
        let amp = |ch: &str| REFERENCE_SIGMAS * noise.radiation(ch).expect("radiation channel");
        match self {
            Reference::Drift => vec![InjectionSpec::drift(
                "ram_pool",
                0,
                len,
                DRIFT_END_SIGMAS * noise.ram_pool / (len.max(2) - 1) as f64,
            )],
            Reference::Spike => vec![InjectionSpec::spike("ram_pool", 150, 50, amp("ram_pool"))],
            Reference::Concurrent => vec![
                InjectionSpec::spike("ram_pool", 40, 30, amp("ram_pool")),
                InjectionSpec::spike("ram_wtr", 170, 30, amp("ram_wtr")),
                InjectionSpec::spike("ram_con", 190, 25, amp("ram_con")),
                InjectionSpec::spike("cam", 160, 24, amp("cam")),
            ],
        }
    }
}

/// Where the profile of a scenario file comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSource {
    Preset(String),
    Custom(OperationProfile),
}

/// Scenario file: a profile plus the falsifications to apply to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub profile: ProfileSource,
    #[serde(default)]
    pub injections: Vec<InjectionSpec>,
}

impl ScenarioSpec {
    pub fn resolve_profile(&self, seed: u64) -> Result<OperationProfile> {
        match &self.profile {
            ProfileSource::Preset(name) => OperationProfile::preset(name, seed),
            ProfileSource::Custom(p) => Ok(p.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn noiseless_constant_power_is_closed_form() {
        let mut p = OperationProfile::test(0);
        p.segments = vec![Segment::Hold { duration: 50 }];
        p.noise = NoiseScales::zero();
        let (f, _) = gen_normal(&p).unwrap();
        let counts: f64 = 5.0 + 5e4 * 0.4;
        let want = 0.5 + 0.3 * (1.0 + counts).log10();
        for t in 0..50 {
            assert_eq!(f.values.get(t, 0), want);
            assert_eq!(f.values.get(t, 4), counts);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = gen_normal(&OperationProfile::test(3)).unwrap();
        let b = gen_normal(&OperationProfile::test(3)).unwrap();
        let c = gen_normal(&OperationProfile::test(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.values, c.0.values);
    }

    #[test]
    fn pool_tracks_log_counts() {
        let p = OperationProfile::with_segments(
            0.0,
            vec![
                Segment::Ramp {
                    to: 0.9,
                    duration: 150,
                },
                Segment::Hold { duration: 300 },
                Segment::Ramp {
                    to: 0.0,
                    duration: 100,
                },
                Segment::Shutdown { duration: 100 },
            ],
            5,
        );
        let (f, _) = gen_normal(&p).unwrap();
        let lc: Vec<f64> = f
            .values
            .column(4)
            .iter()
            .map(|c| (1.0 + c).log10())
            .collect();
        assert!(pearson(&f.values.column(0), &lc) > 0.9);
    }

    #[test]
    fn profiles_tile_their_duration() {
        assert_eq!(OperationProfile::test(0).power().len(), 300);
        assert_eq!(OperationProfile::calibration(0).power().len(), 900);
        let t = OperationProfile::training(1, 3000);
        assert!(t.duration() >= 3000);
        assert_eq!(t.power().len(), t.duration());
        assert!(t.power().iter().all(|&p| p >= 0.0));
        let mut bad = OperationProfile::test(0);
        bad.segments.clear();
        assert!(gen_normal(&bad).is_err());
    }

    #[test]
    fn normal_data_stays_inside_bounds() {
        let p = OperationProfile::training(2, 3000);
        let (f, b) = gen_normal(&p).unwrap();
        for (c, name) in f.channels.iter().enumerate() {
            let cb = b.channels[name];
            for v in f.values.column(c) {
                assert!(v >= cb.min && v <= cb.max, "{name}: {v} outside {cb:?}");
            }
        }
    }

    fn frame() -> SignalFrame {
        gen_normal(&OperationProfile::test(9)).unwrap().0
    }

    #[test]
    fn drift_contract() {
        let f = frame();
        let flat = inject_drift(&f, &InjectionSpec::drift("ram_pool", 0, 300, 0.0)).unwrap();
        assert_eq!(flat.frame.values, f.values);
        assert_eq!(flat.mask.column_count(0), 300);

        let s = 0.001;
        let d = inject_drift(&f, &InjectionSpec::drift("ram_pool", 0, 300, s)).unwrap();
        assert_eq!(d.frame.values.get(299, 0) - f.values.get(299, 0), {
            let x = f.values.get(299, 0);
            (x + s * 299.0) - x
        });
        assert_abs_diff_eq!(
            d.frame.values.get(299, 0) - f.values.get(299, 0),
            s * 299.0,
            epsilon = 1e-12
        );
        for c in 1..6 {
            assert_eq!(d.frame.values.column(c), f.values.column(c));
        }
        let mut q = InjectionSpec::drift("cam", 10, 5, 0.5);
        q.shape = DriftShape::Quadratic;
        let d = inject_drift(&f, &q).unwrap();
        assert_abs_diff_eq!(
            d.frame.values.get(14, 3) - f.values.get(14, 3),
            8.0,
            epsilon = 1e-12
        );
        assert!(inject_drift(&f, &InjectionSpec::drift("nope", 0, 5, 0.1)).is_err());
    }

    #[test]
    fn spike_contract() {
        let f = frame();
        let one = inject_spike(&f, &InjectionSpec::spike("ram_wtr", 20, 1, 0.5)).unwrap();
        assert_abs_diff_eq!(
            one.frame.values.get(20, 1) - f.values.get(20, 1),
            0.5,
            epsilon = 1e-12
        );
        let s = inject_spike(&f, &InjectionSpec::spike("ram_pool", 150, 50, 0.48)).unwrap();
        assert_eq!(s.mask.column_count(0), 50);
        assert!(
            s.mask.get(150, 0) && s.mask.get(199, 0) && !s.mask.get(200, 0) && !s.mask.get(149, 0)
        );
        assert_abs_diff_eq!(
            s.frame.values.get(150, 0) - f.values.get(150, 0),
            0.24,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            s.frame.values.get(170, 0) - f.values.get(170, 0),
            0.48,
            epsilon = 1e-12
        );
        assert!(inject_spike(&f, &InjectionSpec::spike("ram_pool", 290, 20, 0.1)).is_err());
    }

    #[test]
    fn multi_contract() {
        let f = frame();
        let id = inject_multi(&f, &[]).unwrap();
        assert_eq!(id.frame.values, f.values);
        assert_eq!(id.mask.count(), 0);
        let two = inject_multi(
            &f,
            &[
                InjectionSpec::spike("cam", 10, 5, 0.2),
                InjectionSpec::spike("cam", 40, 7, 0.2),
            ],
        )
        .unwrap();
        assert_eq!(two.mask.column_count(3), 12);
        let bad = inject_multi(
            &f,
            &[
                InjectionSpec::spike("cam", 10, 5, 0.2),
                InjectionSpec::spike("cam", 299, 7, 0.2),
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn concurrent_reference_window() {
        let f = frame();
        let specs = Reference::Concurrent.specs(&NoiseScales::default(), 300);
        let inj = inject_multi(&f, &specs).unwrap();
        let count = |c: usize| (180..200).filter(|&t| inj.mask.get(t, c)).count();
        assert_eq!(count(1), 20);
        assert_eq!(count(2), 10);
        assert_eq!(count(3), 4);
        assert_eq!(count(0), 0);
    }

    #[test]
    fn reference_drift_crosses_three_sigma_at_mid_frame() {
        let noise = NoiseScales::default();
        let spec = &Reference::Drift.specs(&noise, 300)[0];
        let offset = |t: usize| spec.amplitude * t as f64 / noise.ram_pool;
        assert!(offset(149) < 3.0 && offset(150) >= 3.0);
        assert_abs_diff_eq!(offset(299), DRIFT_END_SIGMAS, epsilon = 1e-12);
        for r in [Reference::Spike, Reference::Concurrent] {
            for s in r.specs(&noise, 300) {
                assert_abs_diff_eq!(
                    s.amplitude,
                    REFERENCE_SIGMAS * noise.radiation(&s.channel).unwrap(),
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn scenario_file_parses_presets_and_custom_profiles() {
        let s: ScenarioSpec = serde_json::from_str(
            r#"{"profile": "default", "injections": [
                {"kind": "spike", "channel": "ram_pool", "start": 150, "duration": 50, "amplitude": 0.48}]}"#,
        )
        .unwrap();
        assert_eq!(s.resolve_profile(1).unwrap(), OperationProfile::test(1));
        assert_eq!(s.injections[0].edge, 1);
        let s: ScenarioSpec = serde_json::from_str(
            r#"{"profile": {"start_level": 0.2, "segments": [{"kind": "hold", "duration": 40}]}}"#,
        )
        .unwrap();
        assert_eq!(s.resolve_profile(0).unwrap().duration(), 40);
    }
}
