//! Batched LSTM cell with hand-derived backward pass.
//!
//! Gate rows are stacked `[input; forget; cell; output]`, so `w` is
//! `4H × in`, `u` is `4H × H` and `b` is `1 × 4H`:
//!
//! ```text
//! a   = x·wᵀ + h_prev·uᵀ + b
//! i,f,o = σ(a_i), σ(a_f), σ(a_o);  g = tanh(a_g)
//! c   = f ⊙ c_prev + i ⊙ g
//! h   = o ⊙ tanh(c)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{matmul_acc, matmul_tn_acc, sigmoid, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Matrix,
}

impl LstmLayerParams {
    /// Uniform(±1/√fan_in) weights, zero biases except the forget gate at +1.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w = Matrix::uniform(4 * hidden, input, 1.0 / (input as f64).sqrt(), rng);
        let u = Matrix::uniform(4 * hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng);
        let mut b = Matrix::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            b.set(0, j, 1.0);
        }
        LstmLayerParams { w, u, b }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w: Matrix::zeros(4 * hidden, input),
            u: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(1, 4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }

    /// Transposed weights for the forward products; build once per batch.
    pub fn kernel(&self) -> LstmKernel {
        LstmKernel {
            wt: self.w.transpose(),
            ut: self.u.transpose(),
        }
    }
}

pub struct LstmKernel {
    wt: Matrix,
    ut: Matrix,
}

/// Everything the backward pass needs from one cell evaluation.
#[derive(Debug, Clone)]
pub struct CellCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    /// Post-activation gates, `B × 4H`.
    gates: Matrix,
    tanh_c: Matrix,
}

pub struct CellOutput {
    pub h: Matrix,
    pub c: Matrix,
    pub cache: CellCache,
}

fn check_shapes(x: &Matrix, h: &Matrix, c: &Matrix, p: &LstmLayerParams) -> Result<()> {
    let hidden = p.hidden();
    if x.cols() != p.input() {
        return Err(Error::Shape {
            op: "lstm input",
            left: x.shape(),
            right: p.w.shape(),
        });
    }
    for s in [h, c] {
        if s.shape() != (x.rows(), hidden) {
            return Err(Error::Shape {
                op: "lstm state",
                left: s.shape(),
                right: (x.rows(), hidden),
            });
        }
    }
    Ok(())
}

/// One step for a batch (`x` is `B × in`, states are `B × H`).
pub fn lstm_cell_forward(
    x: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
    p: &LstmLayerParams,
) -> Result<CellOutput> {
    check_shapes(x, h_prev, c_prev, p)?;
    Ok(cell_step(x, h_prev, c_prev, p, &p.kernel()))
}

pub(crate) fn cell_step(
    x: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
    p: &LstmLayerParams,
    k: &LstmKernel,
) -> CellOutput {
    let batch = x.rows();
    let hd = p.hidden();
    let mut gates = Matrix::zeros(batch, 4 * hd);
    for r in 0..batch {
        gates.row_mut(r).copy_from_slice(p.b.row(0));
    }
    matmul_acc(x, &k.wt, &mut gates);
    matmul_acc(h_prev, &k.ut, &mut gates);

    let mut h = Matrix::zeros(batch, hd);
    let mut c = Matrix::zeros(batch, hd);
    let mut tanh_c = Matrix::zeros(batch, hd);
    for r in 0..batch {
        let g = gates.row_mut(r);
        for v in &mut g[..2 * hd] {
            *v = sigmoid(*v);
        }
        for v in &mut g[2 * hd..3 * hd] {
            *v = v.tanh();
        }
        for v in &mut g[3 * hd..] {
            *v = sigmoid(*v);
        }
        let cp = c_prev.row(r);
        let (cr, tr, hr) = (c.row_mut(r), tanh_c.row_mut(r), h.row_mut(r));
        for j in 0..hd {
            let cv = g[hd + j] * cp[j] + g[j] * g[2 * hd + j];
            cr[j] = cv;
            tr[j] = cv.tanh();
            hr[j] = g[3 * hd + j] * tr[j];
        }
    }
    CellOutput {
        h,
        c,
        cache: CellCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            gates,
            tanh_c,
        },
    }
}

pub struct CellGrads {
    pub dx: Matrix,
    pub dh_prev: Matrix,
    pub dc_prev: Matrix,
}

/// Backward through one step. `dh`/`dc` are the upstream gradients on the
/// step outputs; parameter gradients accumulate into `grads`.
pub fn lstm_cell_backward(
    cache: &CellCache,
    dh: &Matrix,
    dc: &Matrix,
    p: &LstmLayerParams,
    grads: &mut LstmLayerParams,
) -> CellGrads {
    let batch = cache.x.rows();
    let hd = p.hidden();
    let mut da = Matrix::zeros(batch, 4 * hd);
    let mut dc_prev = Matrix::zeros(batch, hd);
    for r in 0..batch {
        let g = cache.gates.row(r);
        let tc = cache.tanh_c.row(r);
        let cp = cache.c_prev.row(r);
        let (dhr, dcr) = (dh.row(r), dc.row(r));
        let dar = da.row_mut(r);
        let mut dcp = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let d_o = dhr[j] * tc[j];
            let dct = dcr[j] + dhr[j] * o * (1.0 - tc[j] * tc[j]);
            dar[j] = dct * gg * i * (1.0 - i);
            dar[hd + j] = dct * cp[j] * f * (1.0 - f);
            dar[2 * hd + j] = dct * i * (1.0 - gg * gg);
            dar[3 * hd + j] = d_o * o * (1.0 - o);
            dcp[j] = dct * f;
        }
        dc_prev.row_mut(r).copy_from_slice(&dcp);
    }
    matmul_tn_acc(&da, &cache.x, &mut grads.w);
    matmul_tn_acc(&da, &cache.h_prev, &mut grads.u);
    let gb = grads.b.row_mut(0);
    for r in 0..batch {
        for (acc, v) in gb.iter_mut().zip(da.row(r)) {
            *acc += v;
        }
    }
    let mut dx = Matrix::zeros(batch, p.input());
    matmul_acc(&da, &p.w, &mut dx);
    let mut dh_prev = Matrix::zeros(batch, hd);
    matmul_acc(&da, &p.u, &mut dh_prev);
    CellGrads {
        dx,
        dh_prev,
        dc_prev,
    }
}

/// Runs a layer over a whole sequence from zero state.
pub(crate) fn layer_forward(xs: &[Matrix], p: &LstmLayerParams) -> (Vec<Matrix>, Vec<CellCache>) {
    let batch = xs[0].rows();
    let k = p.kernel();
    let mut h = Matrix::zeros(batch, p.hidden());
    let mut c = Matrix::zeros(batch, p.hidden());
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let out = cell_step(x, &h, &c, p, &k);
        h = out.h;
        c = out.c;
        hs.push(h.clone());
        caches.push(out.cache);
    }
    (hs, caches)
}

/// Backward through a layer run by [`layer_forward`]; `dhs[t]` is the
/// gradient on the hidden output at step `t`. Returns per-step input grads.
pub(crate) fn layer_backward(
    caches: &[CellCache],
    dhs: &[Matrix],
    p: &LstmLayerParams,
    grads: &mut LstmLayerParams,
) -> Vec<Matrix> {
    let batch = caches[0].x.rows();
    let hd = p.hidden();
    let mut dh_next = Matrix::zeros(batch, hd);
    let mut dc_next = Matrix::zeros(batch, hd);
    let mut dxs = vec![Matrix::zeros(0, 0); caches.len()];
    for t in (0..caches.len()).rev() {
        let mut dh = dhs[t].clone();
        dh.add_assign(&dh_next).expect("hidden grads share shape");
        let g = lstm_cell_backward(&caches[t], &dh, &dc_next, p, grads);
        dxs[t] = g.dx;
        dh_next = g.dh_prev;
        dc_next = g.dc_prev;
    }
    dxs
}
