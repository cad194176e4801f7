//! Frames, CSV ingestion, min-max scaling, windowing and the guarded split.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const CHANNELS: [&str; 6] = [
    "ram_pool",
    "ram_wtr",
    "ram_con",
    "cam",
    "neutron_counts",
    "neutron_flux",
];
pub const UNITS: [&str; 6] = ["mR/s", "mR/s", "mR/s", "mR/s", "1/s", "%"];
pub const TIMESTAMP: &str = "timestamp";
/// Longest run of missing samples that ingestion will interpolate.
pub const MAX_GAP: usize = 5;

/// Boolean `N × F` ground-truth mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<bool> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn column_count(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, c)).count()
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape {
                op: "mask union",
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path, channels: &[String]) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).map_err(|e| Error::csv(path.display().to_string(), e))?;
        let ctx = || path.display().to_string();
        w.write_record(channels).map_err(|e| Error::csv(ctx(), e))?;
        for r in 0..self.rows {
            let row: Vec<&str> = (0..self.cols)
                .map(|c| if self.get(r, c) { "1" } else { "0" })
                .collect();
            w.write_record(&row).map_err(|e| Error::csv(ctx(), e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a mask written by [`Mask::write_csv`]; columns are matched by name.
    pub fn read_csv(path: &Path, channels: &[String]) -> Result<Mask> {
        let ctx = || path.display().to_string();
        let mut rdr = open_csv(path)?;
        let header = rdr.headers().map_err(|e| Error::csv(ctx(), e))?.clone();
        let idx = channels
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h.trim() == c)
                    .ok_or_else(|| Error::MissingColumn(c.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(ctx(), e))?;
            for (&i, c) in idx.iter().zip(channels) {
                let cell = rec.get(i).unwrap_or("").trim();
                data.push(match cell {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => {
                        return Err(Error::BadCell {
                            row: r,
                            column: c.clone(),
                            value: cell.to_string(),
                        })
                    }
                });
            }
            rows += 1;
        }
        Ok(Mask {
            rows,
            cols: channels.len(),
            data,
        })
    }
}

/// Timestamped multichannel series at 1 s cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    pub timestamps: Vec<f64>,
    pub channels: Vec<String>,
    /// `N × F`, one column per channel.
    pub values: Matrix,
    pub mask: Option<Mask>,
}

impl SignalFrame {
    pub fn new(timestamps: Vec<f64>, channels: Vec<String>, values: Matrix) -> Result<Self> {
        if values.rows() != timestamps.len() || values.cols() != channels.len() {
            return Err(Error::Shape {
                op: "signal frame",
                left: values.shape(),
                right: (timestamps.len(), channels.len()),
            });
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::domain(format!("duplicate channel `{c}`")));
            }
        }
        for (r, w) in timestamps.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonMonotoneTimestamps { row: r + 1 });
            }
        }
        Ok(SignalFrame {
            timestamps,
            channels,
            values,
            mask: None,
        })
    }

    /// Frame with timestamps `0, 1, …, N−1` and the standard channel names.
    pub fn standard(values: Matrix) -> Result<Self> {
        let n = values.rows();
        SignalFrame::new(
            (0..n).map(|t| t as f64).collect(),
            CHANNELS.iter().map(|s| s.to_string()).collect(),
            values,
        )
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::domain(format!("unknown channel `{name}`")))
    }

    /// Rows `[start, end)`; the mask, if any, is sliced along.
    pub fn slice(&self, start: usize, end: usize) -> SignalFrame {
        let cols = self.values.cols();
        let data = self.values.data()[start * cols..end * cols].to_vec();
        let mask = self.mask.as_ref().map(|m| {
            let mut out = Mask::new(end - start, m.cols());
            for r in start..end {
                for c in 0..m.cols() {
                    out.set(r - start, c, m.get(r, c));
                }
            }
            out
        });
        SignalFrame {
            timestamps: self.timestamps[start..end].to_vec(),
            channels: self.channels.clone(),
            values: Matrix::from_vec(end - start, cols, data).expect("slice of a valid frame"),
            mask,
        }
    }

    /// Concatenates frames with matching channels, renumbering timestamps.
    pub fn concat(frames: &[SignalFrame]) -> Result<SignalFrame> {
        let first = frames
            .first()
            .ok_or_else(|| Error::domain("nothing to concatenate"))?;
        let cols = first.channels.len();
        let mut data = Vec::new();
        for f in frames {
            if f.channels != first.channels {
                return Err(Error::domain("frames disagree on channels"));
            }
            data.extend_from_slice(f.values.data());
        }
        let n = data.len() / cols;
        SignalFrame::new(
            (0..n).map(|t| t as f64).collect(),
            first.channels.clone(),
            Matrix::from_vec(n, cols, data)?,
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let ctx = || path.display().to_string();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(ctx(), e))?;
        let mut header = vec![TIMESTAMP.to_string()];
        header.extend(self.channels.iter().cloned());
        w.write_record(&header).map_err(|e| Error::csv(ctx(), e))?;
        for r in 0..self.len() {
            let mut row = vec![self.timestamps[r].to_string()];
            row.extend(self.values.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| Error::csv(ctx(), e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One interpolated run, reported by [`ingest_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapFill {
    pub channel: String,
    pub row: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub frame: SignalFrame,
    pub filled: Vec<GapFill>,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "check the path or run `attnae generate` first".into(),
        },
        _ => Error::io(path, e),
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a CSV with a `timestamp` column and the given channel columns.
///
/// Missing samples (empty cells, or skipped seconds in the timestamp
/// column) are linearly interpolated when a run is at most [`MAX_GAP`]
/// long; runs touching either end are filled with the nearest value.
pub fn ingest_csv(path: &Path, channels: &[&str]) -> Result<Ingested> {
    let ctx = || path.display().to_string();
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| Error::csv(ctx(), e))?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ts_col = find(TIMESTAMP)?;
    let cols = channels
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut stamps: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(ctx(), e))?;
        let parse = |i: usize, name: &str| -> Result<Option<f64>> {
            let cell = rec.get(i).unwrap_or("");
            if cell.is_empty() {
                return Ok(None);
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(Error::BadCell {
                    row: r,
                    column: name.to_string(),
                    value: cell.to_string(),
                }),
            }
        };
        let ts = parse(ts_col, TIMESTAMP)?.ok_or_else(|| Error::BadCell {
            row: r,
            column: TIMESTAMP.into(),
            value: String::new(),
        })?;
        if let Some(&prev) = stamps.last() {
            if ts <= prev {
                return Err(Error::NonMonotoneTimestamps { row: r });
            }
            let step = ts - prev;
            if (step - step.round()).abs() > 1e-6 {
                return Err(Error::domain(format!(
                    "row {r}: timestamp step {step} is not a whole second"
                )));
            }
            let missing = step.round() as usize - 1;
            if missing > MAX_GAP {
                return Err(Error::OversizedGap {
                    channel: TIMESTAMP.into(),
                    row: r,
                    len: missing,
                });
            }
            for k in 1..=missing {
                stamps.push(prev + k as f64);
                rows.push(vec![None; cols.len()]);
            }
        }
        stamps.push(ts);
        rows.push(
            cols.iter()
                .zip(channels)
                .map(|(&i, name)| parse(i, name))
                .collect::<Result<Vec<_>>>()?,
        );
    }

    let n = rows.len();
    let mut values = Matrix::zeros(n, channels.len());
    let mut filled = Vec::new();
    for (c, name) in channels.iter().enumerate() {
        let mut r = 0;
        while r < n {
            if let Some(v) = rows[r][c] {
                values.set(r, c, v);
                r += 1;
                continue;
            }
            let start = r;
            while r < n && rows[r][c].is_none() {
                r += 1;
            }
            let len = r - start;
            if len > MAX_GAP || len == n {
                return Err(Error::OversizedGap {
                    channel: name.to_string(),
                    row: start,
                    len,
                });
            }
            let left = start.checked_sub(1).and_then(|i| rows[i][c]);
            let right = rows.get(r).and_then(|row| row[c]);
            for k in start..r {
                let v = match (left, right) {
                    (Some(a), Some(b)) => a + (b - a) * (k - start + 1) as f64 / (len + 1) as f64,
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => unreachable!("run shorter than frame has a neighbour"),
                };
                values.set(k, c, v);
            }
            info!("interpolated {len} sample(s) of `{name}` from row {start}");
            filled.push(GapFill {
                channel: name.to_string(),
                row: start,
                len,
            });
        }
    }
    let frame = SignalFrame::new(
        stamps,
        channels.iter().map(|s| s.to_string()).collect(),
        values,
    )?;
    Ok(Ingested { frame, filled })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelBounds {
    pub min: f64,
    pub max: f64,
}

/// Per-channel min-max bounds, persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerBounds {
    pub provenance: String,
    pub channels: IndexMap<String, ChannelBounds>,
}

impl ScalerBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in &self.channels {
            if !(b.max > b.min) || !b.min.is_finite() || !b.max.is_finite() {
                return Err(Error::domain(format!(
                    "degenerate bounds for `{name}`: min {} max {}",
                    b.min, b.max
                )));
            }
        }
        Ok(())
    }

    fn lookup(&self, frame: &SignalFrame) -> Result<Vec<ChannelBounds>> {
        self.validate()?;
        frame
            .channels
            .iter()
            .map(|c| {
                self.channels
                    .get(c)
                    .copied()
                    .ok_or_else(|| Error::domain(format!("no bounds for channel `{c}`")))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json("bounds", e))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "bounds JSON is written by `attnae generate`".into(),
            },
            _ => Error::io(path, e),
        })?;
        let b: ScalerBounds =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        b.validate()?;
        Ok(b)
    }
}

/// `(x − min)/(max − min)` clamped to `[0, 1]`. Clamped cells are logged.
pub fn scale(frame: &SignalFrame, bounds: &ScalerBounds) -> Result<SignalFrame> {
    let b = bounds.lookup(frame)?;
    let mut out = frame.clone();
    let mut clamped = vec![0usize; b.len()];
    for r in 0..frame.len() {
        for (c, cb) in b.iter().enumerate() {
            let v = (frame.values.get(r, c) - cb.min) / (cb.max - cb.min);
            let s = v.clamp(0.0, 1.0);
            if s != v {
                clamped[c] += 1;
            }
            out.values.set(r, c, s);
        }
    }
    for (c, n) in clamped.iter().enumerate() {
        if *n > 0 {
            warn!(
                "clamped {n} value(s) of `{}` to the scaler range",
                frame.channels[c]
            );
        }
    }
    Ok(out)
}

/// Inverse of [`scale`] on the interior.
pub fn unscale(frame: &SignalFrame, bounds: &ScalerBounds) -> Result<SignalFrame> {
    let b = bounds.lookup(frame)?;
    let mut out = frame.clone();
    for r in 0..frame.len() {
        for (c, cb) in b.iter().enumerate() {
            out.values
                .set(r, c, cb.min + frame.values.get(r, c) * (cb.max - cb.min));
        }
    }
    Ok(out)
}

/// Stack of `T × F` windows cut from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<Matrix>,
    pub starts: Vec<usize>,
    pub window: usize,
    pub frame_len: usize,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn make_windows(frame: &SignalFrame, window: usize, stride: usize) -> Result<WindowBatch> {
    windows_of(&frame.values, window, stride)
}

pub fn windows_of(values: &Matrix, window: usize, stride: usize) -> Result<WindowBatch> {
    let n = values.rows();
    if window == 0 || stride == 0 {
        return Err(Error::domain("window length and stride must be positive"));
    }
    if n < window {
        return Err(Error::domain(format!(
            "frame of {n} rows is shorter than window {window}"
        )));
    }
    let cols = values.cols();
    let starts: Vec<usize> = (0..=n - window).step_by(stride).collect();
    let windows = starts
        .iter()
        .map(|&s| {
            Matrix::from_vec(
                window,
                cols,
                values.data()[s * cols..(s + window) * cols].to_vec(),
            )
            .expect("window slice has exact length")
        })
        .collect();
    Ok(WindowBatch {
        windows,
        starts,
        window,
        frame_len: n,
    })
}

/// Chronological split at `⌊fraction·N⌋`, discarding `guard` rows between
/// the parts. Both parts must hold at least `guard` rows.
pub fn split_train_val(
    frame: &SignalFrame,
    fraction: f64,
    guard: usize,
) -> Result<(SignalFrame, SignalFrame)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!(
            "split fraction {fraction} must lie strictly inside (0, 1)"
        )));
    }
    let n = frame.len();
    let cut = (fraction * n as f64).floor() as usize;
    let min = guard.max(1);
    if cut < min || n < cut + guard + min {
        return Err(Error::domain(format!(
            "frame of {n} rows too short for a {fraction} split with guard {guard}"
        )));
    }
    Ok((frame.slice(0, cut), frame.slice(cut + guard, n)))
}

/// Writes a whole text file, mapping failures to [`Error::Io`].
pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}
