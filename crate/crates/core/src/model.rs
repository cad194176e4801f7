//! LSTM autoencoder with dual attention at the latent code.
//!
//! Encoder: two stacked LSTM layers (dropout between them in training),
//! then a bottleneck projection of the last hidden state. Both attention
//! branches read the latent code; their combined context seeds the first
//! decoder layer's hidden state. The decoder runs autoregressively on its
//! own output, and each step also receives that step's temporal context.

use serde::{Deserialize, Serialize};

use crate::attention::{
    combine_context, combine_context_backward, feature_attention, feature_attention_backward,
    temporal_attention, temporal_attention_backward, AttentionDims, AttentionParams,
    AttentionReport, FeatureAttention, TemporalAttention,
};
use crate::error::{Error, Result};
use crate::lstm::{
    cell_step, layer_backward, layer_forward, lstm_cell_backward, CellCache, LstmLayerParams,
};
use crate::numeric::{dropout_mask, matmul_acc, matmul_tn_acc, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub window: usize,
    pub features: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub bottleneck: usize,
    pub attention: usize,
    pub embedding: usize,
    pub context: usize,
}

impl Architecture {
    pub fn attention_dims(&self) -> AttentionDims {
        AttentionDims {
            window: self.window,
            features: self.features,
            latent: self.bottleneck,
            hidden: self.hidden2,
            attention: self.attention,
            embedding: self.embedding,
            context: self.context,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.window,
            self.features,
            self.hidden1,
            self.hidden2,
            self.bottleneck,
            self.attention,
            self.embedding,
            self.context,
        ];
        if sizes.contains(&0) {
            return Err(Error::domain(format!(
                "architecture sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub dropout: f64,
    pub encoder1: LstmLayerParams,
    pub encoder2: LstmLayerParams,
    /// `bottleneck × hidden2`.
    pub bottleneck_w: Matrix,
    pub bottleneck_b: Matrix,
    pub attention: AttentionParams,
    /// `hidden2 × (bottleneck + context)`.
    pub decoder_init_w: Matrix,
    pub decoder_init_b: Matrix,
    /// Input is `[previous output ; step temporal context]`.
    pub decoder1: LstmLayerParams,
    pub decoder2: LstmLayerParams,
    /// `F × hidden1`.
    pub output_w: Matrix,
    pub output_b: Matrix,
}

macro_rules! tensor_list {
    ($s:expr, $($amp:tt)+) => {
        vec![
            ("encoder1.w", $($amp)+ $s.encoder1.w),
            ("encoder1.u", $($amp)+ $s.encoder1.u),
            ("encoder1.b", $($amp)+ $s.encoder1.b),
            ("encoder2.w", $($amp)+ $s.encoder2.w),
            ("encoder2.u", $($amp)+ $s.encoder2.u),
            ("encoder2.b", $($amp)+ $s.encoder2.b),
            ("bottleneck.w", $($amp)+ $s.bottleneck_w),
            ("bottleneck.b", $($amp)+ $s.bottleneck_b),
            ("attention.feature_query", $($amp)+ $s.attention.feature_query),
            ("attention.feature_key", $($amp)+ $s.attention.feature_key),
            ("attention.feature_score", $($amp)+ $s.attention.feature_score),
            ("attention.temporal_query", $($amp)+ $s.attention.temporal_query),
            ("attention.temporal_hidden", $($amp)+ $s.attention.temporal_hidden),
            ("attention.embeddings", $($amp)+ $s.attention.embeddings),
            ("attention.temporal_value", $($amp)+ $s.attention.temporal_value),
            ("attention.temporal_score", $($amp)+ $s.attention.temporal_score),
            ("attention.context_w", $($amp)+ $s.attention.context_w),
            ("attention.context_b", $($amp)+ $s.attention.context_b),
            ("decoder_init.w", $($amp)+ $s.decoder_init_w),
            ("decoder_init.b", $($amp)+ $s.decoder_init_b),
            ("decoder1.w", $($amp)+ $s.decoder1.w),
            ("decoder1.u", $($amp)+ $s.decoder1.u),
            ("decoder1.b", $($amp)+ $s.decoder1.b),
            ("decoder2.w", $($amp)+ $s.decoder2.w),
            ("decoder2.u", $($amp)+ $s.decoder2.u),
            ("decoder2.b", $($amp)+ $s.decoder2.b),
            ("output.w", $($amp)+ $s.output_w),
            ("output.b", $($amp)+ $s.output_b),
        ]
    };
}

fn dense(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), rng)
}

/// `out[b] = x[b] · wᵀ + bias`, batch-major.
fn affine(x: &Matrix, wt: &Matrix, bias: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), wt.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(bias.row(0));
    }
    matmul_acc(x, wt, &mut out);
    out
}

/// Gradients of [`affine`]; returns the input gradient.
fn affine_backward(
    x: &Matrix,
    w: &Matrix,
    dout: &Matrix,
    gw: &mut Matrix,
    gb: &mut Matrix,
) -> Matrix {
    matmul_tn_acc(dout, x, gw);
    let gbr = gb.row_mut(0);
    for r in 0..dout.rows() {
        for (acc, v) in gbr.iter_mut().zip(dout.row(r)) {
            *acc += v;
        }
    }
    let mut dx = Matrix::zeros(x.rows(), w.cols());
    matmul_acc(dout, w, &mut dx);
    dx
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

fn hsplit(m: &Matrix, at: usize) -> (Matrix, Matrix) {
    let mut a = Matrix::zeros(m.rows(), at);
    let mut b = Matrix::zeros(m.rows(), m.cols() - at);
    for r in 0..m.rows() {
        a.row_mut(r).copy_from_slice(&m.row(r)[..at]);
        b.row_mut(r).copy_from_slice(&m.row(r)[at..]);
    }
    (a, b)
}

/// Latent encoding of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    /// Encoder layer-2 hidden states, `T × hidden2`.
    pub hidden: Matrix,
    pub latent: Vec<f64>,
}

/// Output of a batched forward pass.
pub struct BatchForward {
    pub reconstructions: Vec<Matrix>,
    pub reports: Vec<AttentionReport>,
    cache: Option<ForwardCache>,
}

struct ForwardCache {
    arch: Architecture,
    windows: Vec<Matrix>,
    enc1: Vec<CellCache>,
    masks: Vec<Matrix>,
    enc2: Vec<CellCache>,
    last_hidden: Matrix,
    hidden: Vec<Matrix>,
    latent: Matrix,
    feature: Vec<FeatureAttention>,
    temporal: Vec<TemporalAttention>,
    init_in: Matrix,
    dec1: Vec<CellCache>,
    dec2: Vec<CellCache>,
    dec2_h: Vec<Matrix>,
}

/// Upstream gradients for [`ModelParams::backward`]: one `T × F` matrix per
/// window for the reconstruction, plus optional gradients on the attention
/// weights (α per window, `A` per window).
pub struct Upstream<'a> {
    pub reconstruction: &'a [Matrix],
    pub alpha: Option<&'a [Vec<f64>]>,
    pub temporal: Option<&'a [Matrix]>,
}

impl ModelParams {
    pub fn new(arch: Architecture, dropout: f64, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::domain(format!("dropout {dropout} outside [0, 1)")));
        }
        let a = arch;
        Ok(ModelParams {
            arch,
            dropout,
            encoder1: LstmLayerParams::new(a.features, a.hidden1, rng),
            encoder2: LstmLayerParams::new(a.hidden1, a.hidden2, rng),
            bottleneck_w: dense(a.bottleneck, a.hidden2, rng),
            bottleneck_b: Matrix::zeros(1, a.bottleneck),
            attention: AttentionParams::new(a.attention_dims(), rng),
            decoder_init_w: dense(a.hidden2, a.bottleneck + a.context, rng),
            decoder_init_b: Matrix::zeros(1, a.hidden2),
            decoder1: LstmLayerParams::new(a.features + a.embedding, a.hidden2, rng),
            decoder2: LstmLayerParams::new(a.hidden2, a.hidden1, rng),
            output_w: dense(a.features, a.hidden1, rng),
            output_b: Matrix::zeros(1, a.features),
        })
    }

    /// Same shapes, every entry zero. Also serves as a gradient set.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        tensor_list!(self, &)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        tensor_list!(self, &mut)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    fn check_windows(&self, windows: &[Matrix]) -> Result<()> {
        if windows.is_empty() {
            return Err(Error::domain("forward needs at least one window"));
        }
        let want = (self.arch.window, self.arch.features);
        for w in windows {
            if w.shape() != want {
                return Err(Error::Shape {
                    op: "model input",
                    left: w.shape(),
                    right: want,
                });
            }
            if !w.is_finite() {
                return Err(Error::NonFinite("model input window".into()));
            }
        }
        Ok(())
    }

    /// Runs the encoder on one window.
    pub fn encode(&self, window: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Encoding> {
        self.check_windows(std::slice::from_ref(window))?;
        let enc = self.encode_batch(std::slice::from_ref(window), mode, rng)?;
        Ok(Encoding {
            hidden: enc.hidden.into_iter().next().expect("one window"),
            latent: enc.latent.row(0).to_vec(),
        })
    }

    /// Runs the decoder from a latent code and combined context. The
    /// per-step temporal contexts are taken as zero.
    pub fn decode(&self, latent: &[f64], context: &[f64]) -> Result<Matrix> {
        let a = self.arch;
        if latent.len() != a.bottleneck || context.len() != a.context {
            return Err(Error::Shape {
                op: "decode",
                left: (latent.len(), context.len()),
                right: (a.bottleneck, a.context),
            });
        }
        let z = Matrix::row_vector(latent);
        let ctx = Matrix::row_vector(context);
        let steps = vec![Matrix::zeros(a.window, a.embedding)];
        let dec = self.decode_batch(&z, &ctx, &steps);
        Ok(dec.reconstructions.into_iter().next().expect("one window"))
    }

    /// Forward pass on one window.
    pub fn forward(
        &self,
        window: &Matrix,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Matrix, AttentionReport)> {
        let out = self.forward_batch(std::slice::from_ref(window), mode, rng)?;
        let recon = out.reconstructions.into_iter().next().expect("one window");
        let report = out.reports.into_iter().next().expect("one window");
        Ok((recon, report))
    }

    /// Batched forward pass. Train mode keeps the caches for
    /// [`ModelParams::backward`]; infer mode drops them.
    pub fn forward_batch(
        &self,
        windows: &[Matrix],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<BatchForward> {
        self.check_windows(windows)?;
        let a = self.arch;
        let enc = self.encode_batch(windows, mode, rng)?;

        let mut feature = Vec::with_capacity(windows.len());
        let mut temporal = Vec::with_capacity(windows.len());
        let mut ctx = Matrix::zeros(windows.len(), a.context);
        for (b, w) in windows.iter().enumerate() {
            let z = enc.latent.row(b);
            let fa = feature_attention(z, w, &self.attention)?;
            let ta = temporal_attention(z, &enc.hidden[b], w, &self.attention)?;
            let c = combine_context(&fa.context, &ta.context, &self.attention)?;
            ctx.row_mut(b).copy_from_slice(&c);
            feature.push(fa);
            temporal.push(ta);
        }
        let steps: Vec<Matrix> = temporal.iter().map(|t| t.step_context.clone()).collect();
        let dec = self.decode_batch(&enc.latent, &ctx, &steps);

        let mut reports = Vec::with_capacity(windows.len());
        for (b, recon) in dec.reconstructions.iter().enumerate() {
            if !recon.is_finite() {
                return Err(Error::NonFinite(format!("reconstruction of window {b}")));
            }
            reports.push(AttentionReport {
                feature_weights: feature[b].weights(),
                temporal_matrix: temporal[b].matrix.clone(),
                feature_scores: feature[b].scores.clone(),
                temporal_scores: temporal[b].scores.clone(),
                context: ctx.row(b).to_vec(),
            });
        }
        let cache = match mode {
            Mode::Infer => None,
            Mode::Train => Some(ForwardCache {
                arch: a,
                windows: windows.to_vec(),
                enc1: enc.enc1,
                masks: enc.masks,
                enc2: enc.enc2,
                last_hidden: enc.last_hidden,
                hidden: enc.hidden,
                latent: enc.latent,
                feature,
                temporal,
                init_in: dec.init_in,
                dec1: dec.dec1,
                dec2: dec.dec2,
                dec2_h: dec.dec2_h,
            }),
        };
        Ok(BatchForward {
            reconstructions: dec.reconstructions,
            reports,
            cache,
        })
    }

    fn encode_batch(&self, windows: &[Matrix], mode: Mode, rng: &mut Rng) -> Result<EncodeBatch> {
        let a = self.arch;
        let batch = windows.len();
        let xs: Vec<Matrix> = (0..a.window)
            .map(|t| {
                let mut m = Matrix::zeros(batch, a.features);
                for (b, w) in windows.iter().enumerate() {
                    m.row_mut(b).copy_from_slice(w.row(t));
                }
                m
            })
            .collect();
        let (h1, enc1) = layer_forward(&xs, &self.encoder1);
        let mut masks = Vec::new();
        let dropped: Vec<Matrix> = match mode {
            Mode::Train if self.dropout > 0.0 => {
                let mut out = Vec::with_capacity(h1.len());
                for h in &h1 {
                    let m = dropout_mask(batch, a.hidden1, self.dropout, rng)?;
                    out.push(h.hadamard(&m)?);
                    masks.push(m);
                }
                out
            }
            _ => h1,
        };
        let (h2, enc2) = layer_forward(&dropped, &self.encoder2);
        let last_hidden = h2[a.window - 1].clone();
        let latent = affine(
            &last_hidden,
            &self.bottleneck_w.transpose(),
            &self.bottleneck_b,
        );
        let hidden = (0..batch)
            .map(|b| {
                let mut m = Matrix::zeros(a.window, a.hidden2);
                for (t, h) in h2.iter().enumerate() {
                    m.row_mut(t).copy_from_slice(h.row(b));
                }
                m
            })
            .collect();
        Ok(EncodeBatch {
            enc1,
            masks,
            enc2,
            last_hidden,
            hidden,
            latent,
        })
    }

    fn decode_batch(&self, latent: &Matrix, ctx: &Matrix, steps: &[Matrix]) -> DecodeBatch {
        let a = self.arch;
        let batch = latent.rows();
        let init_in = hcat(latent, ctx);
        let mut h1 = affine(
            &init_in,
            &self.decoder_init_w.transpose(),
            &self.decoder_init_b,
        );
        let mut c1 = Matrix::zeros(batch, a.hidden2);
        let mut h2 = Matrix::zeros(batch, a.hidden1);
        let mut c2 = Matrix::zeros(batch, a.hidden1);
        let k1 = self.decoder1.kernel();
        let k2 = self.decoder2.kernel();
        let wo = self.output_w.transpose();
        let mut y = Matrix::zeros(batch, a.features);
        let mut dec1 = Vec::with_capacity(a.window);
        let mut dec2 = Vec::with_capacity(a.window);
        let mut dec2_h = Vec::with_capacity(a.window);
        let mut recon = vec![Matrix::zeros(a.window, a.features); batch];
        for t in 0..a.window {
            let mut tc = Matrix::zeros(batch, a.embedding);
            for (b, s) in steps.iter().enumerate() {
                tc.row_mut(b).copy_from_slice(s.row(t));
            }
            let input = hcat(&y, &tc);
            let o1 = cell_step(&input, &h1, &c1, &self.decoder1, &k1);
            h1 = o1.h;
            c1 = o1.c;
            let o2 = cell_step(&h1, &h2, &c2, &self.decoder2, &k2);
            h2 = o2.h;
            c2 = o2.c;
            y = affine(&h2, &wo, &self.output_b);
            for (b, r) in recon.iter_mut().enumerate() {
                r.row_mut(t).copy_from_slice(y.row(b));
            }
            dec1.push(o1.cache);
            dec2.push(o2.cache);
            dec2_h.push(h2.clone());
        }
        DecodeBatch {
            reconstructions: recon,
            init_in,
            dec1,
            dec2,
            dec2_h,
        }
    }

    /// Exact gradients of `Σ ⟨upstream, outputs⟩` for the computation graph
    /// recorded by a train-mode [`ModelParams::forward_batch`].
    pub fn backward(&self, fwd: &BatchForward, up: &Upstream<'_>) -> Result<ModelParams> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("backward needs a train-mode forward cache".into()))?;
        if cache.arch != self.arch {
            return Err(Error::Usage(
                "forward cache belongs to a different architecture".into(),
            ));
        }
        let a = self.arch;
        let batch = cache.windows.len();
        if up.reconstruction.len() != batch {
            return Err(Error::Shape {
                op: "backward upstream",
                left: (up.reconstruction.len(), 0),
                right: (batch, 0),
            });
        }
        let mut g = self.zeros_like();

        // Decoder, newest step first.
        let wo = &self.output_w;
        let mut dh1 = Matrix::zeros(batch, a.hidden2);
        let mut dc1 = Matrix::zeros(batch, a.hidden2);
        let mut dh2 = Matrix::zeros(batch, a.hidden1);
        let mut dc2 = Matrix::zeros(batch, a.hidden1);
        let mut dy_carry = Matrix::zeros(batch, a.features);
        let mut d_steps = vec![Matrix::zeros(a.window, a.embedding); batch];
        for t in (0..a.window).rev() {
            let mut dy = dy_carry;
            for (b, r) in up.reconstruction.iter().enumerate() {
                for (acc, v) in dy.row_mut(b).iter_mut().zip(r.row(t)) {
                    *acc += v;
                }
            }
            let mut dh2_out =
                affine_backward(&cache.dec2_h[t], wo, &dy, &mut g.output_w, &mut g.output_b);
            dh2_out.add_assign(&dh2)?;
            let g2 = lstm_cell_backward(
                &cache.dec2[t],
                &dh2_out,
                &dc2,
                &self.decoder2,
                &mut g.decoder2,
            );
            dh2 = g2.dh_prev;
            dc2 = g2.dc_prev;
            let mut dh1_out = g2.dx;
            dh1_out.add_assign(&dh1)?;
            let g1 = lstm_cell_backward(
                &cache.dec1[t],
                &dh1_out,
                &dc1,
                &self.decoder1,
                &mut g.decoder1,
            );
            dh1 = g1.dh_prev;
            dc1 = g1.dc_prev;
            let (dy_prev, dtc) = hsplit(&g1.dx, a.features);
            dy_carry = dy_prev;
            for (b, ds) in d_steps.iter_mut().enumerate() {
                ds.row_mut(t).copy_from_slice(dtc.row(b));
            }
        }
        let dinit = affine_backward(
            &cache.init_in,
            &self.decoder_init_w,
            &dh1,
            &mut g.decoder_init_w,
            &mut g.decoder_init_b,
        );
        let (mut dz, dctx) = hsplit(&dinit, a.bottleneck);

        // Attention, one window at a time.
        let mut dh_seq = vec![Matrix::zeros(batch, a.hidden2); a.window];
        let inv_t = 1.0 / a.window as f64;
        for b in 0..batch {
            let (fa, ta, w) = (&cache.feature[b], &cache.temporal[b], &cache.windows[b]);
            let z = cache.latent.row(b);
            let (dfc, dtc) = combine_context_backward(
                &fa.context,
                &ta.context,
                dctx.row(b),
                &self.attention,
                &mut g.attention,
            );
            let dzb = dz.row_mut(b);
            let alpha = up.alpha.map(|v| v[b].as_slice());
            feature_attention_backward(
                fa,
                z,
                w,
                &dfc,
                alpha,
                &self.attention,
                &mut g.attention,
                dzb,
            );
            let ds = &mut d_steps[b];
            for t in 0..a.window {
                for (acc, v) in ds.row_mut(t).iter_mut().zip(&dtc) {
                    *acc += v * inv_t;
                }
            }
            let dmat = up.temporal.map(|v| &v[b]);
            let dh = temporal_attention_backward(
                ta,
                z,
                &cache.hidden[b],
                w,
                ds,
                dmat,
                &self.attention,
                &mut g.attention,
                dzb,
            );
            for (t, d) in dh_seq.iter_mut().enumerate() {
                d.row_mut(b).copy_from_slice(dh.row(t));
            }
        }

        // Bottleneck and encoder.
        let dlast = affine_backward(
            &cache.last_hidden,
            &self.bottleneck_w,
            &dz,
            &mut g.bottleneck_w,
            &mut g.bottleneck_b,
        );
        dh_seq[a.window - 1].add_assign(&dlast)?;
        let mut dd = layer_backward(&cache.enc2, &dh_seq, &self.encoder2, &mut g.encoder2);
        if !cache.masks.is_empty() {
            for (d, m) in dd.iter_mut().zip(&cache.masks) {
                *d = d.hadamard(m)?;
            }
        }
        layer_backward(&cache.enc1, &dd, &self.encoder1, &mut g.encoder1);

        for (name, t) in g.tensors() {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        Ok(g)
    }
}

struct EncodeBatch {
    enc1: Vec<CellCache>,
    masks: Vec<Matrix>,
    enc2: Vec<CellCache>,
    last_hidden: Matrix,
    hidden: Vec<Matrix>,
    latent: Matrix,
}

struct DecodeBatch {
    reconstructions: Vec<Matrix>,
    init_in: Matrix,
    dec1: Vec<CellCache>,
    dec2: Vec<CellCache>,
    dec2_h: Vec<Matrix>,
}

/// Mean squared difference over all entries.
pub fn mse_loss(reconstruction: &Matrix, target: &Matrix) -> Result<f64> {
    if reconstruction.shape() != target.shape() {
        return Err(Error::Shape {
            op: "mse_loss",
            left: reconstruction.shape(),
            right: target.shape(),
        });
    }
    let n = reconstruction.data().len() as f64;
    Ok(reconstruction
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, t)| (r - t) * (r - t))
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture {
            window: 4,
            features: 2,
            hidden1: 3,
            hidden2: 2,
            bottleneck: 3,
            attention: 3,
            embedding: 2,
            context: 2,
        }
    }

    #[test]
    fn zero_model_reconstructs_output_bias() {
        let mut p = ModelParams::new(tiny_arch(), 0.0, &mut Rng::new(1)).unwrap();
        for (_, t) in p.tensors_mut() {
            t.fill(0.0);
        }
        p.output_b = Matrix::row_vector(&[0.25, -0.5]);
        p.bottleneck_b = Matrix::row_vector(&[0.1, 0.2, 0.3]);
        let w = Matrix::zeros(4, 2);
        let enc = p.encode(&w, Mode::Infer, &mut Rng::new(0)).unwrap();
        assert_eq!(enc.latent, vec![0.1, 0.2, 0.3]);
        let r = p.decode(&enc.latent, &[0.0, 0.0]).unwrap();
        assert_eq!(r.shape(), (4, 2));
        for t in 0..4 {
            assert_eq!(r.row(t), &[0.25, -0.5]);
        }
    }

    #[test]
    fn infer_mode_is_pure() {
        let p = ModelParams::new(tiny_arch(), 0.5, &mut Rng::new(3)).unwrap();
        let w = Matrix::uniform(4, 2, 1.0, &mut Rng::new(4));
        let a = p.forward(&w, Mode::Infer, &mut Rng::new(5)).unwrap();
        let b = p.forward(&w, Mode::Infer, &mut Rng::new(6)).unwrap();
        assert_eq!(a, b);
        let e1 = p.encode(&w, Mode::Infer, &mut Rng::new(5)).unwrap();
        let e2 = p.encode(&w, Mode::Infer, &mut Rng::new(9)).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(a.1.temporal_matrix.shape(), (4, 2));
        assert_abs_diff_eq!(a.1.feature_weights.iter().sum::<f64>(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn batch_and_single_agree() {
        let p = ModelParams::new(tiny_arch(), 0.0, &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(8);
        let ws: Vec<Matrix> = (0..3)
            .map(|_| Matrix::uniform(4, 2, 1.0, &mut rng))
            .collect();
        let batch = p.forward_batch(&ws, Mode::Infer, &mut rng).unwrap();
        for (w, r) in ws.iter().zip(&batch.reconstructions) {
            let (single, _) = p.forward(w, Mode::Infer, &mut rng).unwrap();
            assert!(single.max_abs_diff(r) < 1e-14);
        }
    }

    #[test]
    fn backward_needs_train_cache() {
        let p = ModelParams::new(tiny_arch(), 0.0, &mut Rng::new(3)).unwrap();
        let w = Matrix::uniform(4, 2, 1.0, &mut Rng::new(4));
        let fwd = p
            .forward_batch(&[w], Mode::Infer, &mut Rng::new(0))
            .unwrap();
        let d = vec![Matrix::zeros(4, 2)];
        let up = Upstream {
            reconstruction: &d,
            alpha: None,
            temporal: None,
        };
        assert!(matches!(p.backward(&fwd, &up), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_errors() {
        let p = ModelParams::new(tiny_arch(), 0.0, &mut Rng::new(3)).unwrap();
        assert!(p
            .forward(&Matrix::zeros(5, 2), Mode::Infer, &mut Rng::new(0))
            .is_err());
        assert!(p.decode(&[0.0; 2], &[0.0; 2]).is_err());
        assert!(mse_loss(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn mse_cases() {
        let a = Matrix::uniform(4, 3, 1.0, &mut Rng::new(1));
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 1.0);
        assert_abs_diff_eq!(mse_loss(&b, &a).unwrap(), 1.0, epsilon = 1e-12);
        let c = Matrix::uniform(4, 3, 1.0, &mut Rng::new(2));
        let mut naive = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                naive += (a.get(i, j) - c.get(i, j)).powi(2);
            }
        }
        assert_eq!(mse_loss(&a, &c).unwrap(), naive / 12.0);
    }

    #[test]
    fn tensor_list_covers_every_parameter() {
        let p = ModelParams::new(tiny_arch(), 0.0, &mut Rng::new(3)).unwrap();
        let json = serde_json::to_value(&p).unwrap();
        fn count(v: &serde_json::Value) -> usize {
            match v {
                serde_json::Value::Object(m) if m.contains_key("data") => {
                    m["data"].as_array().unwrap().len()
                }
                serde_json::Value::Object(m) => m.values().map(count).sum(),
                _ => 0,
            }
        }
        assert_eq!(count(&json), p.parameter_count());
    }

    struct Case {
        params: ModelParams,
        windows: Vec<Matrix>,
        targets: Vec<Matrix>,
        r_alpha: Vec<Vec<f64>>,
        r_temporal: Vec<Matrix>,
        dropout_seed: u64,
    }

    fn case(seed: u64) -> Case {
        let mut rng = Rng::new(seed);
        let params = ModelParams::new(tiny_arch(), 0.3, &mut rng).unwrap();
        let windows = (0..3)
            .map(|_| Matrix::uniform(4, 2, 1.0, &mut rng).map(f64::abs))
            .collect();
        let targets = (0..3)
            .map(|_| Matrix::uniform(4, 2, 1.0, &mut rng))
            .collect();
        let r_alpha = (0..3)
            .map(|_| vec![rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)])
            .collect();
        let r_temporal = (0..3)
            .map(|_| Matrix::uniform(4, 2, 1.0, &mut rng))
            .collect();
        Case {
            params,
            windows,
            targets,
            r_alpha,
            r_temporal,
            dropout_seed: seed + 1000,
        }
    }

    /// Batch MSE plus linear probes on α and A so every path is exercised.
    fn loss(c: &Case, p: &ModelParams) -> f64 {
        let out = p
            .forward_batch(&c.windows, Mode::Train, &mut Rng::new(c.dropout_seed))
            .unwrap();
        let mut l = 0.0;
        for b in 0..c.windows.len() {
            l += mse_loss(&out.reconstructions[b], &c.targets[b]).unwrap() / c.windows.len() as f64;
            let alpha: Vec<f64> = out.reports[b]
                .feature_weights
                .iter()
                .map(|w| w / 2.0)
                .collect();
            l += alpha
                .iter()
                .zip(&c.r_alpha[b])
                .map(|(a, r)| a * r)
                .sum::<f64>();
            l += out.reports[b]
                .temporal_matrix
                .hadamard(&c.r_temporal[b])
                .unwrap()
                .data()
                .iter()
                .sum::<f64>();
        }
        l
    }

    fn gradients(c: &Case, p: &ModelParams, scale: f64) -> ModelParams {
        let fwd = p
            .forward_batch(&c.windows, Mode::Train, &mut Rng::new(c.dropout_seed))
            .unwrap();
        let n = (c.windows.len() * 8) as f64;
        let d: Vec<Matrix> = fwd
            .reconstructions
            .iter()
            .zip(&c.targets)
            .map(|(r, t)| {
                let mut m = r.clone();
                m.add_assign(&t.map(|v| -v)).unwrap();
                m.scale(2.0 * scale / n);
                m
            })
            .collect();
        let ra: Vec<Vec<f64>> = c
            .r_alpha
            .iter()
            .map(|v| v.iter().map(|x| x * scale).collect())
            .collect();
        let rt: Vec<Matrix> = c.r_temporal.iter().map(|m| m.map(|x| x * scale)).collect();
        p.backward(
            &fwd,
            &Upstream {
                reconstruction: &d,
                alpha: Some(&ra),
                temporal: Some(&rt),
            },
        )
        .unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let c = case(seed);
            let g = gradients(&c, &c.params, 1.0);
            for (i, (name, an)) in g.tensors().into_iter().enumerate() {
                let base = c.params.tensors()[i].1.data().to_vec();
                let fd = crate::numeric::finite_diff_grad(
                    |x| {
                        let mut q = c.params.clone();
                        q.tensors_mut()[i].1.data_mut().copy_from_slice(x);
                        Ok(loss(&c, &q))
                    },
                    &base,
                    1e-5,
                )
                .unwrap();
                for (a, f) in an.data().iter().zip(&fd) {
                    let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
                    assert!(rel <= 1e-4, "seed {seed} {name}: analytic {a} vs fd {f}");
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst <= 1e-4);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let c = case(11);
        let fwd = c
            .params
            .forward_batch(&c.windows, Mode::Train, &mut Rng::new(1))
            .unwrap();
        let d: Vec<Matrix> = fwd
            .reconstructions
            .iter()
            .map(|r| Matrix::zeros(r.rows(), r.cols()))
            .collect();
        let g = c
            .params
            .backward(
                &fwd,
                &Upstream {
                    reconstruction: &d,
                    alpha: None,
                    temporal: None,
                },
            )
            .unwrap();
        for (_, t) in g.tensors() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn doubling_loss_doubles_gradients() {
        let c = case(12);
        let g1 = gradients(&c, &c.params, 1.0);
        let g2 = gradients(&c, &c.params, 2.0);
        for ((_, a), (_, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }
}
