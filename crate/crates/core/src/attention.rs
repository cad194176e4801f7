//! Feature and temporal additive attention over the latent code.
//!
//! Both branches score with `vᵀ tanh(W q + U k)`. The feature branch keys
//! on whole feature columns; the temporal branch scores every `(t, f)` cell
//! against the encoder hidden state at `t` and normalizes across features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    axpy, dot, matvec, matvec_t_acc, outer_acc, softmax_backward, softmax_in_place, Matrix, Rng,
};

/// Sizes fixed when the attention block is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionDims {
    pub window: usize,
    pub features: usize,
    pub latent: usize,
    pub hidden: usize,
    pub attention: usize,
    pub embedding: usize,
    pub context: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `W_q^f`, `d_a × latent`.
    pub feature_query: Matrix,
    /// `U^f`, `d_a × T`.
    pub feature_key: Matrix,
    /// `v^f`, `1 × d_a`.
    pub feature_score: Matrix,
    /// `W_q^t`, `d_a × latent`.
    pub temporal_query: Matrix,
    /// `W_h`, `d_a × hidden`.
    pub temporal_hidden: Matrix,
    /// `E`, `F × d_e`.
    pub embeddings: Matrix,
    /// `U^t`, `d_a × d_e`.
    pub temporal_value: Matrix,
    /// `v^t`, `1 × d_a`.
    pub temporal_score: Matrix,
    /// `d_c × (d_a + d_e)`.
    pub context_w: Matrix,
    pub context_b: Matrix,
}

fn fan(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), rng)
}

impl AttentionParams {
    pub fn new(d: AttentionDims, rng: &mut Rng) -> Self {
        let da = d.attention;
        AttentionParams {
            feature_query: fan(da, d.latent, rng),
            feature_key: fan(da, d.window, rng),
            feature_score: fan(1, da, rng),
            temporal_query: fan(da, d.latent, rng),
            temporal_hidden: fan(da, d.hidden, rng),
            embeddings: Matrix::uniform(d.features, d.embedding, 1.0, rng),
            temporal_value: fan(da, d.embedding, rng),
            temporal_score: fan(1, da, rng),
            context_w: fan(d.context, da + d.embedding, rng),
            context_b: Matrix::zeros(1, d.context),
        }
    }

    pub fn zeros(d: AttentionDims) -> Self {
        let da = d.attention;
        AttentionParams {
            feature_query: Matrix::zeros(da, d.latent),
            feature_key: Matrix::zeros(da, d.window),
            feature_score: Matrix::zeros(1, da),
            temporal_query: Matrix::zeros(da, d.latent),
            temporal_hidden: Matrix::zeros(da, d.hidden),
            embeddings: Matrix::zeros(d.features, d.embedding),
            temporal_value: Matrix::zeros(da, d.embedding),
            temporal_score: Matrix::zeros(1, da),
            context_w: Matrix::zeros(d.context, da + d.embedding),
            context_b: Matrix::zeros(1, d.context),
        }
    }

    pub fn dims(&self) -> AttentionDims {
        AttentionDims {
            window: self.feature_key.cols(),
            features: self.embeddings.rows(),
            latent: self.feature_query.cols(),
            hidden: self.temporal_hidden.cols(),
            attention: self.feature_query.rows(),
            embedding: self.embeddings.cols(),
            context: self.context_w.rows(),
        }
    }
}

/// Interpretability output for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    /// `F · α`; uniform attention gives 1.0 per feature.
    pub feature_weights: Vec<f64>,
    /// `T × F`, rows sum to 1.
    pub temporal_matrix: Matrix,
    pub feature_scores: Vec<f64>,
    pub temporal_scores: Matrix,
    pub context: Vec<f64>,
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Error {
    Error::Shape { op, left, right }
}

/// Additive score `vᵀ tanh(W·query + U·key)`.
pub fn alignment(query: &[f64], key: &[f64], w: &Matrix, u: &Matrix, v: &[f64]) -> Result<f64> {
    if w.cols() != query.len()
        || u.cols() != key.len()
        || w.rows() != u.rows()
        || v.len() != w.rows()
    {
        return Err(shape_err("alignment", w.shape(), u.shape()));
    }
    let mut a = vec![0.0; w.rows()];
    let mut b = vec![0.0; u.rows()];
    matvec(w, query, &mut a);
    matvec(u, key, &mut b);
    Ok(a.iter()
        .zip(&b)
        .zip(v)
        .map(|((x, y), s)| s * (x + y).tanh())
        .sum())
}

#[derive(Debug, Clone)]
pub struct FeatureAttention {
    pub alpha: Vec<f64>,
    pub scores: Vec<f64>,
    pub context: Vec<f64>,
    /// Keys `k_f`, one row per feature.
    keys: Matrix,
    /// `tanh(W_q z + k_f)`, one row per feature.
    act: Matrix,
}

impl FeatureAttention {
    pub fn weights(&self) -> Vec<f64> {
        let n = self.alpha.len() as f64;
        self.alpha.iter().map(|a| a * n).collect()
    }
}

fn check_inputs(z: &[f64], window: &Matrix, p: &AttentionParams) -> Result<AttentionDims> {
    let d = p.dims();
    if window.shape() != (d.window, d.features) {
        return Err(shape_err(
            "attention window",
            window.shape(),
            (d.window, d.features),
        ));
    }
    if z.len() != d.latent {
        return Err(shape_err("attention latent", (1, z.len()), (1, d.latent)));
    }
    Ok(d)
}

pub fn feature_attention(
    z: &[f64],
    window: &Matrix,
    p: &AttentionParams,
) -> Result<FeatureAttention> {
    let d = check_inputs(z, window, p)?;
    let mut q = vec![0.0; d.attention];
    matvec(&p.feature_query, z, &mut q);
    let keys = window.transpose().matmul(&p.feature_key.transpose())?;
    let v = p.feature_score.row(0);
    let mut act = Matrix::zeros(d.features, d.attention);
    let mut scores = vec![0.0; d.features];
    for f in 0..d.features {
        let row = act.row_mut(f);
        for ((a, k), qq) in row.iter_mut().zip(keys.row(f)).zip(&q) {
            *a = (qq + k).tanh();
        }
        scores[f] = dot(v, row);
    }
    let mut alpha = scores.clone();
    softmax_in_place(&mut alpha);
    let mut context = vec![0.0; d.attention];
    for f in 0..d.features {
        axpy(alpha[f], keys.row(f), &mut context);
    }
    Ok(FeatureAttention {
        alpha,
        scores,
        context,
        keys,
        act,
    })
}

#[derive(Debug, Clone)]
pub struct TemporalAttention {
    /// `A`, `T × F`.
    pub matrix: Matrix,
    pub scores: Matrix,
    /// Per-step context `Σ_f A[t,f] u_{t,f}`, `T × d_e`.
    pub step_context: Matrix,
    /// Mean of the per-step contexts.
    pub context: Vec<f64>,
    /// Activations for every cell, `(t·F + f) × d_a`.
    act: Matrix,
}

pub fn temporal_attention(
    z: &[f64],
    hidden: &Matrix,
    window: &Matrix,
    p: &AttentionParams,
) -> Result<TemporalAttention> {
    let d = check_inputs(z, window, p)?;
    if hidden.shape() != (d.window, d.hidden) {
        return Err(shape_err(
            "temporal hidden",
            hidden.shape(),
            (d.window, d.hidden),
        ));
    }
    let (t_len, nf, da) = (d.window, d.features, d.attention);
    let mut q = vec![0.0; da];
    matvec(&p.temporal_query, z, &mut q);
    let hp = hidden.matmul(&p.temporal_hidden.transpose())?;
    let projected = p.embeddings.matmul(&p.temporal_value.transpose())?;
    let v = p.temporal_score.row(0);

    let mut act = Matrix::zeros(t_len * nf, da);
    let mut scores = Matrix::zeros(t_len, nf);
    let mut matrix = Matrix::zeros(t_len, nf);
    let mut step_context = Matrix::zeros(t_len, d.embedding);
    let mut context = vec![0.0; d.embedding];
    let mut base = vec![0.0; da];
    for t in 0..t_len {
        for ((b, qq), h) in base.iter_mut().zip(&q).zip(hp.row(t)) {
            *b = qq + h;
        }
        for f in 0..nf {
            let x = window.get(t, f);
            let row = act.row_mut(t * nf + f);
            for ((a, b), pp) in row.iter_mut().zip(&base).zip(projected.row(f)) {
                *a = (b + x * pp).tanh();
            }
            scores.set(t, f, dot(v, row));
        }
        let w = matrix.row_mut(t);
        w.copy_from_slice(scores.row(t));
        softmax_in_place(w);
        let sc = step_context.row_mut(t);
        for f in 0..nf {
            axpy(matrix.get(t, f) * window.get(t, f), p.embeddings.row(f), sc);
        }
        axpy(1.0 / t_len as f64, sc, &mut context);
    }
    Ok(TemporalAttention {
        matrix,
        scores,
        step_context,
        context,
        act,
    })
}

/// Affine map of `[feature context ; temporal context]`.
pub fn combine_context(
    feature_ctx: &[f64],
    temporal_ctx: &[f64],
    p: &AttentionParams,
) -> Result<Vec<f64>> {
    let d = p.dims();
    if feature_ctx.len() != d.attention || temporal_ctx.len() != d.embedding {
        return Err(shape_err(
            "combine_context",
            (feature_ctx.len(), temporal_ctx.len()),
            (d.attention, d.embedding),
        ));
    }
    let cat: Vec<f64> = feature_ctx.iter().chain(temporal_ctx).copied().collect();
    let mut out = p.context_b.row(0).to_vec();
    let mut tmp = vec![0.0; d.context];
    matvec(&p.context_w, &cat, &mut tmp);
    axpy(1.0, &tmp, &mut out);
    Ok(out)
}

/// Gradients of `combine_context`; returns `(d feature ctx, d temporal ctx)`.
pub(crate) fn combine_context_backward(
    feature_ctx: &[f64],
    temporal_ctx: &[f64],
    d_out: &[f64],
    p: &AttentionParams,
    grads: &mut AttentionParams,
) -> (Vec<f64>, Vec<f64>) {
    let cat: Vec<f64> = feature_ctx.iter().chain(temporal_ctx).copied().collect();
    outer_acc(&mut grads.context_w, d_out, &cat);
    axpy(1.0, d_out, grads.context_b.row_mut(0));
    let mut dcat = vec![0.0; cat.len()];
    matvec_t_acc(&p.context_w, d_out, &mut dcat);
    let dt = dcat.split_off(feature_ctx.len());
    (dcat, dt)
}

/// Backward through the feature branch. `d_alpha` is any extra upstream
/// gradient on the normalized weights α. Accumulates into `grads` and `dz`.
pub(crate) fn feature_attention_backward(
    fa: &FeatureAttention,
    z: &[f64],
    window: &Matrix,
    d_context: &[f64],
    d_alpha: Option<&[f64]>,
    p: &AttentionParams,
    grads: &mut AttentionParams,
    dz: &mut [f64],
) {
    let nf = fa.alpha.len();
    let da = fa.keys.cols();
    let mut dalpha: Vec<f64> = (0..nf).map(|f| dot(d_context, fa.keys.row(f))).collect();
    if let Some(extra) = d_alpha {
        axpy(1.0, extra, &mut dalpha);
    }
    let mut de = vec![0.0; nf];
    softmax_backward(&fa.alpha, &dalpha, &mut de);

    let v = p.feature_score.row(0);
    let mut dq = vec![0.0; da];
    let mut dpre = vec![0.0; da];
    for f in 0..nf {
        let a = fa.act.row(f);
        axpy(de[f], a, grads.feature_score.row_mut(0));
        for j in 0..da {
            dpre[j] = de[f] * v[j] * (1.0 - a[j] * a[j]);
        }
        axpy(1.0, &dpre, &mut dq);
        // dk_f = α_f·d_context + dpre
        let mut dk = dpre.clone();
        axpy(fa.alpha[f], d_context, &mut dk);
        outer_acc(&mut grads.feature_key, &dk, &window.column(f));
    }
    outer_acc(&mut grads.feature_query, &dq, z);
    matvec_t_acc(&p.feature_query, &dq, dz);
}

/// Backward through the temporal branch. `d_step` is the upstream gradient
/// on each per-step context (`T × d_e`, the mean's 1/T already folded in);
/// `d_matrix` is any extra gradient on `A`. Returns `dH` (`T × hidden`).
pub(crate) fn temporal_attention_backward(
    ta: &TemporalAttention,
    z: &[f64],
    hidden: &Matrix,
    window: &Matrix,
    d_step: &Matrix,
    d_matrix: Option<&Matrix>,
    p: &AttentionParams,
    grads: &mut AttentionParams,
    dz: &mut [f64],
) -> Matrix {
    let (t_len, nf) = ta.matrix.shape();
    let da = ta.act.cols();
    let v = p.temporal_score.row(0);
    let mut dq = vec![0.0; da];
    let mut dproj = Matrix::zeros(nf, da);
    let mut dh = Matrix::zeros(t_len, hidden.cols());
    let mut dhp = vec![0.0; da];
    let mut da_row = vec![0.0; nf];
    let mut de = vec![0.0; nf];
    let mut dpre = vec![0.0; da];
    for t in 0..t_len {
        let dsc = d_step.row(t);
        for f in 0..nf {
            let x = window.get(t, f);
            let e_f = p.embeddings.row(f);
            da_row[f] = x * dot(dsc, e_f);
            if let Some(extra) = d_matrix {
                da_row[f] += extra.get(t, f);
            }
            axpy(ta.matrix.get(t, f) * x, dsc, grads.embeddings.row_mut(f));
        }
        softmax_backward(ta.matrix.row(t), &da_row, &mut de);
        dhp.iter_mut().for_each(|v| *v = 0.0);
        for f in 0..nf {
            let a = ta.act.row(t * nf + f);
            axpy(de[f], a, grads.temporal_score.row_mut(0));
            for j in 0..da {
                dpre[j] = de[f] * v[j] * (1.0 - a[j] * a[j]);
            }
            axpy(1.0, &dpre, &mut dhp);
            axpy(window.get(t, f), &dpre, dproj.row_mut(f));
        }
        axpy(1.0, &dhp, &mut dq);
        outer_acc(&mut grads.temporal_hidden, &dhp, hidden.row(t));
        matvec_t_acc(&p.temporal_hidden, &dhp, dh.row_mut(t));
    }
    for f in 0..nf {
        outer_acc(&mut grads.temporal_value, dproj.row(f), p.embeddings.row(f));
        matvec_t_acc(&p.temporal_value, dproj.row(f), grads.embeddings.row_mut(f));
    }
    outer_acc(&mut grads.temporal_query, &dq, z);
    matvec_t_acc(&p.temporal_query, &dq, dz);
    dh
}

/// Mean feature weights and mean temporal weight per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub feature_weights: Vec<f64>,
    pub temporal_weights: Vec<f64>,
}

pub fn aggregate_reports(reports: &[AttentionReport]) -> Result<AttentionSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::domain("aggregate_reports needs at least one report"))?;
    let nf = first.feature_weights.len();
    let shape = first.temporal_matrix.shape();
    let mut fw = vec![0.0; nf];
    let mut tw = vec![0.0; nf];
    for r in reports {
        if r.feature_weights.len() != nf || r.temporal_matrix.shape() != shape {
            return Err(shape_err(
                "aggregate_reports",
                r.temporal_matrix.shape(),
                shape,
            ));
        }
        axpy(1.0, &r.feature_weights, &mut fw);
        for t in 0..shape.0 {
            axpy(1.0, r.temporal_matrix.row(t), &mut tw);
        }
    }
    let n = reports.len() as f64;
    fw.iter_mut().for_each(|v| *v /= n);
    tw.iter_mut().for_each(|v| *v /= n * shape.0 as f64);
    Ok(AttentionSummary {
        feature_weights: fw,
        temporal_weights: tw,
    })
}
