//! Forward and backward passes of the multi-source GRU encoder-decoder.
//!
//! Each encoder is a unidirectional GRU over embedded source symbols. The
//! decoder state starts at `bridge · mean_k(h_k)` where `h_k` is the last
//! state of encoder `k`. At every step each encoder gets its own additive
//! attention queried with the previous decoder state; the contexts are
//! concatenated and projected to `g`, the cell consumes `[emb(y_prev); g]`
//! and the output layer reads `[s_t; g]`.

use ndarray::linalg::{general_mat_mul, general_mat_vec_mul};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut1, Axis};

use super::params::{EncoderParams, GruParams, Params};
use super::vocab::BOS;
use crate::scalar::Scalar;

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(xs: ArrayView1<S>) -> Array1<S> {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out = xs.mapv(|x| (x - max).exp());
    let total: S = out.iter().copied().sum();
    out.mapv_inplace(|x| x / total);
    out
}

/// `y = m · x` (overwrites `y`).
fn matvec<S: Scalar>(m: &Array2<S>, x: ArrayView1<S>, mut y: ArrayViewMut1<S>) {
    general_mat_vec_mul(S::one(), m, &x, S::zero(), &mut y);
}

/// `y += mᵀ · x`, accumulated over contiguous rows (a transposed gemv would
/// fall back to strided dot products).
fn matvec_t_acc<S: Scalar>(m: &Array2<S>, x: ArrayView1<S>, mut y: ArrayViewMut1<S>) {
    for (row, &xi) in m.rows().into_iter().zip(x.iter()) {
        if xi != S::zero() {
            y.scaled_add(xi, &row);
        }
    }
}

/// `g += a ⊗ b`.
fn outer_acc<S: Scalar>(g: &mut Array2<S>, a: ArrayView1<S>, b: ArrayView1<S>) {
    let a = a.insert_axis(Axis(1));
    let b = b.insert_axis(Axis(0));
    general_mat_mul(S::one(), &a, &b, S::one(), g);
}

#[derive(Debug, Clone)]
pub(crate) struct GruTrace<S> {
    z: Array1<S>,
    r: Array1<S>,
    n: Array1<S>,
    /// `U_n · h_prev + bu_n`, the part gated by `r`.
    hn: Array1<S>,
}

impl<S: Scalar> GruParams<S> {
    /// One step given the precomputed input projection `a = W·x + bw`.
    fn step(&self, a: ArrayView1<S>, h_prev: ArrayView1<S>) -> (Array1<S>, GruTrace<S>) {
        let h = self.hidden();
        let mut b = self.bu.clone();
        general_mat_vec_mul(S::one(), &self.u, &h_prev, S::one(), &mut b);
        let mut z = Array1::zeros(h);
        let mut r = Array1::zeros(h);
        let mut n = Array1::zeros(h);
        let mut out = Array1::zeros(h);
        for i in 0..h {
            z[i] = sigmoid(a[i] + b[i]);
            r[i] = sigmoid(a[h + i] + b[h + i]);
            n[i] = (a[2 * h + i] + r[i] * b[2 * h + i]).tanh();
            out[i] = (S::one() - z[i]) * n[i] + z[i] * h_prev[i];
        }
        let hn = b.slice(s![2 * h..]).to_owned();
        (out, GruTrace { z, r, n, hn })
    }

    /// Returns the gradients w.r.t. `a` (input projection) and `b` (recurrent
    /// projection) and adds the gradient w.r.t. `h_prev` into `dh_prev`.
    fn backward(
        &self,
        trace: &GruTrace<S>,
        h_prev: ArrayView1<S>,
        dh: ArrayView1<S>,
        mut dh_prev: ArrayViewMut1<S>,
    ) -> (Array1<S>, Array1<S>) {
        let h = self.hidden();
        let one = S::one();
        let mut da = Array1::zeros(3 * h);
        let mut db = Array1::zeros(3 * h);
        for i in 0..h {
            let (z, r, n) = (trace.z[i], trace.r[i], trace.n[i]);
            let dn = dh[i] * (one - z);
            let dz = dh[i] * (h_prev[i] - n);
            dh_prev[i] += dh[i] * z;
            let dpn = dn * (one - n * n);
            let dr = dpn * trace.hn[i];
            let dpz = dz * z * (one - z);
            let dpr = dr * r * (one - r);
            da[i] = dpz;
            da[h + i] = dpr;
            da[2 * h + i] = dpn;
            db[i] = dpz;
            db[h + i] = dpr;
            db[2 * h + i] = dpn * r;
        }
        matvec_t_acc(&self.u, db.view(), dh_prev);
        (da, db)
    }
}

/// Encoder states and the traces needed for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderRun<S> {
    ids: Vec<usize>,
    inputs: Array2<S>,
    /// One row per source position.
    pub states: Array2<S>,
    traces: Vec<GruTrace<S>>,
    keys: Array2<S>,
}

impl<S: Scalar> EncoderRun<S> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn last_state(&self) -> ArrayView1<'_, S> {
        self.states.row(self.states.nrows() - 1)
    }
}

pub fn encode<S: Scalar>(enc: &EncoderParams<S>, ids: &[usize]) -> EncoderRun<S> {
    assert!(!ids.is_empty(), "sources are padded to length >= 1");
    let t = ids.len();
    let h = enc.gru.hidden();
    let mut inputs = Array2::zeros((t, enc.embedding.ncols()));
    for (row, &id) in inputs.rows_mut().into_iter().zip(ids) {
        let mut row = row;
        row.assign(&enc.embedding.row(id));
    }
    let mut proj = Array2::zeros((t, 3 * h));
    general_mat_mul(S::one(), &inputs, &enc.gru.w.t(), S::zero(), &mut proj);
    proj += &enc.gru.bw;
    let mut states = Array2::zeros((t, h));
    let mut traces = Vec::with_capacity(t);
    let mut prev = Array1::zeros(h);
    for j in 0..t {
        let (next, trace) = enc.gru.step(proj.row(j), prev.view());
        states.row_mut(j).assign(&next);
        traces.push(trace);
        prev = next;
    }
    let mut keys = Array2::zeros((t, enc.attention.key.nrows()));
    general_mat_mul(
        S::one(),
        &states,
        &enc.attention.key.t(),
        S::zero(),
        &mut keys,
    );
    EncoderRun {
        ids: ids.to_vec(),
        inputs,
        states,
        traces,
        keys,
    }
}

/// `bridge · (1/N) Σ_k h_k`.
pub fn decoder_init<S: Scalar>(
    params: &Params<S>,
    runs: &[EncoderRun<S>],
) -> (Array1<S>, Array1<S>) {
    let mut mean = Array1::zeros(params.bridge.ncols());
    for run in runs {
        mean += &run.last_state();
    }
    mean.mapv_inplace(|x| x / S::from_usize_lossy(runs.len()));
    let mut s0 = Array1::zeros(params.bridge.nrows());
    matvec(&params.bridge, mean.view(), s0.view_mut());
    (s0, mean)
}

#[derive(Debug, Clone)]
pub struct AttentionTrace<S> {
    u: Array2<S>,
    pub weights: Array1<S>,
}

fn attend<S: Scalar>(
    enc: &EncoderParams<S>,
    run: &EncoderRun<S>,
    s_prev: ArrayView1<S>,
) -> (AttentionTrace<S>, Array1<S>) {
    let att = &enc.attention;
    let mut qa = Array1::zeros(att.query.nrows());
    matvec(&att.query, s_prev, qa.view_mut());
    let mut u = &run.keys + &qa;
    u.mapv_inplace(S::tanh);
    let scores = u.dot(&att.v);
    let weights = softmax(scores.view());
    let mut ctx = Array1::zeros(run.states.ncols());
    matvec_t_acc(&run.states, weights.view(), ctx.view_mut());
    (AttentionTrace { u, weights }, ctx)
}

/// Everything computed in one decoder step.
#[derive(Debug, Clone)]
pub struct DecoderStep<S> {
    prev_symbol: usize,
    s_prev: Array1<S>,
    pub attention: Vec<AttentionTrace<S>>,
    contexts: Array1<S>,
    g: Array1<S>,
    input: Array1<S>,
    trace: GruTrace<S>,
    pub state: Array1<S>,
}

pub fn decoder_step<S: Scalar>(
    params: &Params<S>,
    runs: &[EncoderRun<S>],
    s_prev: ArrayView1<S>,
    prev_symbol: usize,
) -> DecoderStep<S> {
    let he = params.bridge.ncols();
    let mut contexts = Array1::zeros(he * runs.len());
    let mut attention = Vec::with_capacity(runs.len());
    for (k, (enc, run)) in params.encoders.iter().zip(runs).enumerate() {
        let (trace, ctx) = attend(enc, run, s_prev);
        contexts.slice_mut(s![k * he..(k + 1) * he]).assign(&ctx);
        attention.push(trace);
    }
    let mut g = Array1::zeros(params.context.nrows());
    matvec(&params.context, contexts.view(), g.view_mut());
    let e = params.embedding.ncols();
    let mut input = Array1::zeros(e + g.len());
    input
        .slice_mut(s![..e])
        .assign(&params.embedding.row(prev_symbol));
    input.slice_mut(s![e..]).assign(&g);
    let mut a = params.decoder.bw.clone();
    general_mat_vec_mul(S::one(), &params.decoder.w, &input, S::one(), &mut a);
    let (state, trace) = params.decoder.step(a.view(), s_prev);
    DecoderStep {
        prev_symbol,
        s_prev: s_prev.to_owned(),
        attention,
        contexts,
        g,
        input,
        trace,
        state,
    }
}

/// Output distribution for a finished step.
pub fn readout<S: Scalar>(params: &Params<S>, step: &DecoderStep<S>) -> Array1<S> {
    let hd = step.state.len();
    let mut logits = params.output_bias.clone();
    let w = &params.output;
    general_mat_vec_mul(
        S::one(),
        &w.slice(s![.., ..hd]),
        &step.state,
        S::one(),
        &mut logits,
    );
    general_mat_vec_mul(
        S::one(),
        &w.slice(s![.., hd..]),
        &step.g,
        S::one(),
        &mut logits,
    );
    softmax(logits.view())
}

/// Teacher-forced pass over one example.
///
/// Returns `-Σ_t w_t log p(target_t)` and adds `scale` times its gradient
/// into `grads`. `target` ends with EOS; `weights` has one entry per target
/// position.
pub fn forward_backward<S: Scalar>(
    params: &Params<S>,
    sources: &[Vec<usize>],
    target: &[usize],
    weights: &[S],
    scale: S,
    grads: Option<&mut Params<S>>,
) -> S {
    assert_eq!(target.len(), weights.len());
    let runs: Vec<EncoderRun<S>> = params
        .encoders
        .iter()
        .zip(sources)
        .map(|(enc, ids)| encode(enc, ids))
        .collect();
    let (s0, mean) = decoder_init(params, &runs);

    let ty = target.len();
    let hd = s0.len();
    let c = params.context.nrows();
    let mut steps = Vec::with_capacity(ty);
    let mut readin = Array2::zeros((ty, hd + c));
    let mut s_prev = s0;
    for t in 0..ty {
        let prev = if t == 0 { BOS } else { target[t - 1] };
        let step = decoder_step(params, &runs, s_prev.view(), prev);
        readin.slice_mut(s![t, ..hd]).assign(&step.state);
        readin.slice_mut(s![t, hd..]).assign(&step.g);
        s_prev = step.state.clone();
        steps.push(step);
    }
    let mut logits = Array2::zeros((ty, params.output.nrows()));
    general_mat_mul(
        S::one(),
        &readin,
        &params.output.t(),
        S::zero(),
        &mut logits,
    );
    logits += &params.output_bias;

    let mut loss = S::zero();
    let mut dlogits = Array2::zeros(logits.dim());
    for t in 0..ty {
        let p = softmax(logits.row(t));
        loss -= weights[t] * p[target[t]].ln();
        let mut row = dlogits.row_mut(t);
        row.assign(&p);
        row[target[t]] -= S::one();
        row.mapv_inplace(|x| x * weights[t] * scale);
    }
    let Some(grads) = grads else { return loss };

    general_mat_mul(S::one(), &dlogits.t(), &readin, S::one(), &mut grads.output);
    grads.output_bias += &dlogits.sum_axis(Axis(0));
    let mut dreadin = Array2::zeros(readin.dim());
    general_mat_mul(S::one(), &dlogits, &params.output, S::zero(), &mut dreadin);

    let he = params.bridge.ncols();
    let e = params.embedding.ncols();
    let mut d_states: Vec<Array2<S>> = runs.iter().map(|r| Array2::zeros(r.states.dim())).collect();
    let mut d_keys: Vec<Array2<S>> = runs.iter().map(|r| Array2::zeros(r.keys.dim())).collect();
    let mut da_rows = Array2::zeros((ty, 3 * hd));
    let mut db_rows = Array2::zeros((ty, 3 * hd));
    let mut inputs = Array2::zeros((ty, e + c));
    let mut prev_states = Array2::zeros((ty, hd));
    let mut carry = Array1::<S>::zeros(hd);
    for t in (0..ty).rev() {
        let step = &steps[t];
        let mut ds = dreadin.slice(s![t, ..hd]).to_owned();
        ds += &carry;
        let mut ds_prev = Array1::zeros(hd);
        let (da, db) = params.decoder.backward(
            &step.trace,
            step.s_prev.view(),
            ds.view(),
            ds_prev.view_mut(),
        );
        let mut dinput = Array1::zeros(e + c);
        matvec_t_acc(&params.decoder.w, da.view(), dinput.view_mut());
        da_rows.row_mut(t).assign(&da);
        db_rows.row_mut(t).assign(&db);
        inputs.row_mut(t).assign(&step.input);
        prev_states.row_mut(t).assign(&step.s_prev);
        {
            let mut emb_row = grads.embedding.row_mut(step.prev_symbol);
            emb_row += &dinput.slice(s![..e]);
        }
        let mut dg = dreadin.slice(s![t, hd..]).to_owned();
        dg += &dinput.slice(s![e..]);
        outer_acc(&mut grads.context, dg.view(), step.contexts.view());
        let mut dcontexts = Array1::zeros(step.contexts.len());
        matvec_t_acc(&params.context, dg.view(), dcontexts.view_mut());

        for k in 0..runs.len() {
            let dctx = dcontexts.slice(s![k * he..(k + 1) * he]);
            let trace = &step.attention[k];
            let run = &runs[k];
            let att = &params.encoders[k].attention;
            let dweights = run.states.dot(&dctx);
            outer_acc(&mut d_states[k], trace.weights.view(), dctx);
            let dot = trace.weights.dot(&dweights);
            let dscore = &trace.weights * &dweights.mapv(|x| x - dot);
            let gatt = &mut grads.encoders[k].attention;
            matvec_t_acc(&trace.u, dscore.view(), gatt.v.view_mut());
            let mut dpre = trace.u.mapv(|a| S::one() - a * a);
            for (row, &ds_j) in dpre.rows_mut().into_iter().zip(dscore.iter()) {
                let mut row = row;
                row.zip_mut_with(&att.v, |x, &v| *x *= ds_j * v);
            }
            let dqa = dpre.sum_axis(Axis(0));
            d_keys[k] += &dpre;
            outer_acc(&mut gatt.query, dqa.view(), step.s_prev.view());
            matvec_t_acc(&att.query, dqa.view(), ds_prev.view_mut());
        }
        carry = ds_prev;
    }
    general_mat_mul(
        S::one(),
        &da_rows.t(),
        &inputs,
        S::one(),
        &mut grads.decoder.w,
    );
    grads.decoder.bw += &da_rows.sum_axis(Axis(0));
    general_mat_mul(
        S::one(),
        &db_rows.t(),
        &prev_states,
        S::one(),
        &mut grads.decoder.u,
    );
    grads.decoder.bu += &db_rows.sum_axis(Axis(0));

    // carry now holds the gradient w.r.t. the initial decoder state.
    outer_acc(&mut grads.bridge, carry.view(), mean.view());
    let mut dmean = Array1::zeros(he);
    matvec_t_acc(&params.bridge, carry.view(), dmean.view_mut());
    dmean.mapv_inplace(|x| x / S::from_usize_lossy(runs.len()));

    for (k, run) in runs.iter().enumerate() {
        let enc = &params.encoders[k];
        let genc = &mut grads.encoders[k];
        let mut dstates = std::mem::replace(&mut d_states[k], Array2::zeros((0, 0)));
        general_mat_mul(
            S::one(),
            &d_keys[k].t(),
            &run.states,
            S::one(),
            &mut genc.attention.key,
        );
        general_mat_mul(
            S::one(),
            &d_keys[k],
            &enc.attention.key,
            S::one(),
            &mut dstates,
        );
        let last = run.len() - 1;
        {
            let mut row = dstates.row_mut(last);
            row += &dmean;
        }
        let h = enc.gru.hidden();
        let mut da_rows = Array2::zeros((run.len(), 3 * h));
        let mut db_rows = Array2::zeros((run.len(), 3 * h));
        let mut prev_states = Array2::zeros((run.len(), h));
        let mut carry = Array1::<S>::zeros(h);
        let zero = Array1::<S>::zeros(h);
        for j in (0..run.len()).rev() {
            let mut dh = dstates.row(j).to_owned();
            dh += &carry;
            let h_prev = if j == 0 {
                zero.view()
            } else {
                run.states.row(j - 1)
            };
            let mut dh_prev = Array1::zeros(h);
            let (da, db) = enc
                .gru
                .backward(&run.traces[j], h_prev, dh.view(), dh_prev.view_mut());
            da_rows.row_mut(j).assign(&da);
            db_rows.row_mut(j).assign(&db);
            prev_states.row_mut(j).assign(&h_prev);
            carry = dh_prev;
        }
        general_mat_mul(
            S::one(),
            &da_rows.t(),
            &run.inputs,
            S::one(),
            &mut genc.gru.w,
        );
        genc.gru.bw += &da_rows.sum_axis(Axis(0));
        general_mat_mul(
            S::one(),
            &db_rows.t(),
            &prev_states,
            S::one(),
            &mut genc.gru.u,
        );
        genc.gru.bu += &db_rows.sum_axis(Axis(0));
        let mut dinputs = Array2::zeros(run.inputs.dim());
        general_mat_mul(S::one(), &da_rows, &enc.gru.w, S::zero(), &mut dinputs);
        for (j, &id) in run.ids.iter().enumerate() {
            let mut row = genc.embedding.row_mut(id);
            row += &dinputs.row(j);
        }
    }
    loss
}
