//! Forward and backward passes of the network pieces, batched over
//! variable-length sequences.
//!
//! Sequences are processed in lockstep up to the longest length in the
//! batch. Rows past a sequence's end compute throw-away states: nothing
//! downstream reads them, so they receive exactly zero gradient.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{Attention, Lstm};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) struct LstmStep {
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c_prev: Array2<f64>,
    tanh_c: Array2<f64>,
    h_prev_in: Array2<f64>,
}

pub(crate) struct LstmCache {
    /// Inputs after dropout, stacked step-major: row `t * batch + b`.
    x_stack: Array2<f64>,
    steps: Vec<LstmStep>,
    recurrent_mask: Option<Array2<f64>>,
    batch: usize,
}

/// Runs one direction over `seqs` (each `len × input`, already in the order
/// this direction reads them). Returns the hidden state of every step,
/// `batch × hidden` each.
pub(crate) fn lstm_forward(
    p: &Lstm,
    seqs: &[ArrayView2<'_, f64>],
    input_mask: Option<&Array2<f64>>,
    recurrent_mask: Option<&Array2<f64>>,
) -> (Vec<Array2<f64>>, LstmCache) {
    let batch = seqs.len();
    let hidden = p.hidden();
    let width = p.input_width();
    let steps = seqs.iter().map(|x| x.nrows()).max().unwrap_or(0);

    let mut x_stack = Array2::zeros((steps * batch, width));
    for (b, x) in seqs.iter().enumerate() {
        for t in 0..x.nrows() {
            let mut row = x_stack.row_mut(t * batch + b);
            row.assign(&x.row(t));
            if let Some(m) = input_mask {
                row *= &m.row(b);
            }
        }
    }
    let mut pre = x_stack.dot(&p.w_x);
    pre += &p.b;

    let mut h = Array2::<f64>::zeros((batch, hidden));
    let mut c = Array2::<f64>::zeros((batch, hidden));
    let mut outputs = Vec::with_capacity(steps);
    let mut cache_steps = Vec::with_capacity(steps);
    for t in 0..steps {
        let h_in = match recurrent_mask {
            Some(m) => &h * m,
            None => h.clone(),
        };
        let mut z = pre.slice(s![t * batch..(t + 1) * batch, ..]).to_owned();
        z += &h_in.dot(&p.w_h);

        let mut i = Array2::zeros((batch, hidden));
        let mut f = Array2::zeros((batch, hidden));
        let mut g = Array2::zeros((batch, hidden));
        let mut o = Array2::zeros((batch, hidden));
        let mut c_new = Array2::zeros((batch, hidden));
        let mut tanh_c = Array2::zeros((batch, hidden));
        let mut h_new = Array2::zeros((batch, hidden));
        for b in 0..batch {
            let zr = z.row(b);
            for k in 0..hidden {
                let iv = sigmoid(zr[k]);
                let fv = sigmoid(zr[hidden + k]);
                let gv = zr[2 * hidden + k].tanh();
                let ov = sigmoid(zr[3 * hidden + k]);
                let cv = fv * c[[b, k]] + iv * gv;
                let tc = cv.tanh();
                i[[b, k]] = iv;
                f[[b, k]] = fv;
                g[[b, k]] = gv;
                o[[b, k]] = ov;
                c_new[[b, k]] = cv;
                tanh_c[[b, k]] = tc;
                h_new[[b, k]] = ov * tc;
            }
        }
        let c_prev = std::mem::replace(&mut c, c_new);
        h = h_new;
        outputs.push(h.clone());
        cache_steps.push(LstmStep {
            i,
            f,
            g,
            o,
            c_prev,
            tanh_c,
            h_prev_in: h_in,
        });
    }
    (
        outputs,
        LstmCache {
            x_stack,
            steps: cache_steps,
            recurrent_mask: recurrent_mask.cloned(),
            batch,
        },
    )
}

/// Backpropagation through time. `d_out[t]` is the loss gradient with
/// respect to the step-`t` hidden state; parameter gradients are added
/// into `grad`.
pub(crate) fn lstm_backward(p: &Lstm, cache: &LstmCache, d_out: &[Array2<f64>], grad: &mut Lstm) {
    let batch = cache.batch;
    let hidden = p.hidden();
    let steps = cache.steps.len();
    let mut dz_stack = Array2::<f64>::zeros((steps * batch, 4 * hidden));
    let mut dh_next = Array2::<f64>::zeros((batch, hidden));
    let mut dc_next = Array2::<f64>::zeros((batch, hidden));
    for t in (0..steps).rev() {
        let st = &cache.steps[t];
        let dh = &d_out[t] + &dh_next;
        let mut dz = dz_stack.slice_mut(s![t * batch..(t + 1) * batch, ..]);
        for b in 0..batch {
            for k in 0..hidden {
                let (iv, fv, gv, ov, tc) = (st.i[[b, k]], st.f[[b, k]], st.g[[b, k]], st.o[[b, k]], st.tanh_c[[b, k]]);
                let dhv = dh[[b, k]];
                let dc = dc_next[[b, k]] + dhv * ov * (1.0 - tc * tc);
                dz[[b, k]] = dc * gv * iv * (1.0 - iv);
                dz[[b, hidden + k]] = dc * st.c_prev[[b, k]] * fv * (1.0 - fv);
                dz[[b, 2 * hidden + k]] = dc * iv * (1.0 - gv * gv);
                dz[[b, 3 * hidden + k]] = dhv * tc * ov * (1.0 - ov);
                dc_next[[b, k]] = dc * fv;
            }
        }
        let dz = dz.view();
        grad.w_h += &st.h_prev_in.t().dot(&dz);
        let mut dh_prev = dz.dot(&p.w_h.t());
        if let Some(m) = &cache.recurrent_mask {
            dh_prev *= m;
        }
        dh_next = dh_prev;
    }
    if steps > 0 {
        grad.w_x += &cache.x_stack.t().dot(&dz_stack);
        grad.b += &dz_stack.sum_axis(Axis(0));
    }
}

pub(crate) struct AttentionCache {
    inputs: Array2<f64>,
    u: Array2<f64>,
    alpha: Array1<f64>,
    offsets: Vec<usize>,
}

impl AttentionCache {
    pub(crate) fn weights(&self, item: usize) -> Array1<f64> {
        self.alpha.slice(s![self.offsets[item]..self.offsets[item + 1]]).to_owned()
    }
}

/// Attention over a batch of sequences stacked row-wise into `inputs`;
/// item `k` owns rows `offsets[k]..offsets[k + 1]`. Returns one context
/// row per item.
pub(crate) fn attention_forward(p: &Attention, inputs: Array2<f64>, offsets: Vec<usize>) -> (Array2<f64>, AttentionCache) {
    let items = offsets.len() - 1;
    let u = inputs.dot(&p.w.t()).mapv_into(f64::tanh);
    let scores = u.dot(&p.v);
    let mut alpha = Array1::zeros(inputs.nrows());
    let mut ctx = Array2::zeros((items, inputs.ncols()));
    for k in 0..items {
        let (lo, hi) = (offsets[k], offsets[k + 1]);
        let seg = scores.slice(s![lo..hi]);
        let max = seg.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = seg.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (t, e) in exps.iter().enumerate() {
            let a = e / total;
            alpha[lo + t] = a;
            ctx.row_mut(k).scaled_add(a, &inputs.row(lo + t));
        }
    }
    (ctx, AttentionCache { inputs, u, alpha, offsets })
}

/// Gradient of the attention layer given `d_ctx` (`items × width`).
/// Parameter gradients are added into `grad`; the input gradient is
/// returned when requested.
pub(crate) fn attention_backward(
    p: &Attention,
    cache: &AttentionCache,
    d_ctx: ArrayView2<'_, f64>,
    grad: &mut Attention,
    want_input_grad: bool,
) -> Option<Array2<f64>> {
    let n = cache.inputs.nrows();
    let items = cache.offsets.len() - 1;
    let mut d_scores = Array1::<f64>::zeros(n);
    for k in 0..items {
        let (lo, hi) = (cache.offsets[k], cache.offsets[k + 1]);
        let dc = d_ctx.row(k);
        let d_alpha: Vec<f64> = (lo..hi).map(|r| cache.inputs.row(r).dot(&dc)).collect();
        let mean: f64 = (lo..hi).zip(&d_alpha).map(|(r, da)| cache.alpha[r] * da).sum();
        for (r, da) in (lo..hi).zip(&d_alpha) {
            d_scores[r] = cache.alpha[r] * (da - mean);
        }
    }
    grad.v += &cache.u.t().dot(&d_scores);
    let mut d_pre = cache.u.mapv(|u| 1.0 - u * u);
    for (mut row, &ds) in d_pre.outer_iter_mut().zip(d_scores.iter()) {
        row *= ds;
        row *= &p.v;
    }
    grad.w += &d_pre.t().dot(&cache.inputs);
    if !want_input_grad {
        return None;
    }
    let mut d_in = d_pre.dot(&p.w);
    for k in 0..items {
        let dc = d_ctx.row(k);
        for r in cache.offsets[k]..cache.offsets[k + 1] {
            d_in.row_mut(r).scaled_add(cache.alpha[r], &dc);
        }
    }
    Some(d_in)
}

/// Inverted-dropout mask with entries `0` or `1 / (1 - rate)`.
pub(crate) fn dropout_mask(rng: &mut impl rand::Rng, rows: usize, cols: usize, rate: f64) -> Option<Array2<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

/// Row-wise softmax.
pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}
