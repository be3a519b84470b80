//! Whole-sequence kernels for one recurrent direction.
//!
//! Activations are stored in time order (row `t` is the state at time `t`)
//! regardless of direction, so input projections and weight gradients are
//! single matrix products over the sequence. Only the recurrent
//! `H × H` products run step by step.

use crate::linalg::{gemm, matvec_acc, matvec_t_acc, sigmoid, Matrix, View};

use super::params::{CellParams, GruCellParams, LstmCellParams};

/// Time index of the `k`-th processed step.
#[inline]
fn time_of(k: usize, len: usize, reverse: bool) -> usize {
    if reverse {
        len - 1 - k
    } else {
        k
    }
}

/// Time index of the state feeding step `t`, `None` at the direction's start.
#[inline]
fn prev_time(t: usize, len: usize, reverse: bool) -> Option<usize> {
    if reverse {
        (t + 1 < len).then_some(t + 1)
    } else {
        t.checked_sub(1)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GruTrace {
    update: Vec<f64>,
    reset: Vec<f64>,
    candidate: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    forget: Vec<f64>,
    input: Vec<f64>,
    output: Vec<f64>,
    candidate: Vec<f64>,
    s: Vec<f64>,
    h: Vec<f64>,
}

/// Cached activations of one direction over one sequence.
#[derive(Debug, Clone)]
pub(crate) enum DirectionTrace {
    Gru(GruTrace),
    Lstm(LstmTrace),
}

impl DirectionTrace {
    /// Hidden states, `len × H`, time order.
    pub(crate) fn hidden(&self) -> &[f64] {
        match self {
            DirectionTrace::Gru(t) => &t.h,
            DirectionTrace::Lstm(t) => &t.h,
        }
    }
}

/// `xs · W[:, H..]ᵀ + b` for every step: `len × H`.
fn project(w: &Matrix, b: &[f64], xs: &[f64], len: usize) -> Vec<f64> {
    let hidden = w.rows();
    let input = w.cols() - hidden;
    let mut out = Vec::with_capacity(len * hidden);
    for _ in 0..len {
        out.extend_from_slice(b);
    }
    gemm(
        len,
        input,
        hidden,
        1.0,
        View::rm(xs, 0, input),
        View::t(w.as_slice(), hidden, w.cols()),
        1.0,
        &mut out,
        0,
        hidden,
    );
    out
}

/// Row `t` holds the state that fed step `t` (zeros at the direction's start).
fn shifted_states(h: &[f64], len: usize, hidden: usize, reverse: bool) -> Vec<f64> {
    let mut out = vec![0.0; len * hidden];
    for t in 0..len {
        if let Some(p) = prev_time(t, len, reverse) {
            out[t * hidden..(t + 1) * hidden].copy_from_slice(&h[p * hidden..(p + 1) * hidden]);
        }
    }
    out
}

/// `dW[:, ..H] += daᵀ·states`, `dW[:, H..] += daᵀ·xs`, `db += Σ_t da`.
fn accumulate_weight_grad(dw: &mut Matrix, db: &mut [f64], da: &[f64], states: &[f64], xs: &[f64], len: usize) {
    let hidden = dw.rows();
    let cols = dw.cols();
    let input = cols - hidden;
    gemm(hidden, len, hidden, 1.0, View::t(da, 0, hidden), View::rm(states, 0, hidden), 1.0, dw.as_mut_slice(), 0, cols);
    gemm(hidden, len, input, 1.0, View::t(da, 0, hidden), View::rm(xs, 0, input), 1.0, dw.as_mut_slice(), hidden, cols);
    for row in da.chunks_exact(hidden) {
        db.iter_mut().zip(row).for_each(|(b, d)| *b += d);
    }
}

/// `dxs += da · W[:, H..]`.
fn accumulate_input_grad(dxs: &mut [f64], da: &[f64], w: &Matrix, len: usize) {
    let hidden = w.rows();
    let input = w.cols() - hidden;
    gemm(len, hidden, input, 1.0, View::rm(da, 0, hidden), View::rm(w.as_slice(), hidden, w.cols()), 1.0, dxs, 0, input);
}

pub(crate) fn run_direction(cell: &CellParams, xs: &[f64], len: usize, reverse: bool) -> DirectionTrace {
    match cell {
        CellParams::Gru(p) => DirectionTrace::Gru(run_gru(p, xs, len, reverse)),
        CellParams::Lstm(p) => DirectionTrace::Lstm(run_lstm(p, xs, len, reverse)),
    }
}

fn run_gru(p: &GruCellParams, xs: &[f64], len: usize, reverse: bool) -> GruTrace {
    let hidden = p.hidden();
    let mut update = project(&p.w_u, &p.b_u, xs, len);
    let mut reset = project(&p.w_r, &p.b_r, xs, len);
    let mut candidate = project(&p.w_h, &p.b_h, xs, len);
    let mut h = vec![0.0; len * hidden];
    let zeros = vec![0.0; hidden];
    let mut gated = vec![0.0; hidden];

    for k in 0..len {
        let t = time_of(k, len, reverse);
        let rows = t * hidden..(t + 1) * hidden;
        let hp: &[f64] = match prev_time(t, len, reverse) {
            Some(pt) => &h[pt * hidden..(pt + 1) * hidden],
            None => &zeros,
        };
        // `hp` borrows `h` immutably; the new state is written after.
        let u = &mut update[rows.clone()];
        matvec_acc(&p.w_u, 0, hp, u);
        u.iter_mut().for_each(|v| *v = sigmoid(*v));
        let r = &mut reset[rows.clone()];
        matvec_acc(&p.w_r, 0, hp, r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        for i in 0..hidden {
            gated[i] = r[i] * hp[i];
        }
        let c = &mut candidate[rows.clone()];
        matvec_acc(&p.w_h, 0, &gated, c);
        c.iter_mut().for_each(|v| *v = v.tanh());
        let next: Vec<f64> = (0..hidden).map(|i| (1.0 - u[i]) * hp[i] + u[i] * c[i]).collect();
        h[rows].copy_from_slice(&next);
    }
    GruTrace {
        update,
        reset,
        candidate,
        h,
    }
}

fn run_lstm(p: &LstmCellParams, xs: &[f64], len: usize, reverse: bool) -> LstmTrace {
    let hidden = p.hidden();
    let mut forget = project(&p.w_f, &p.b_f, xs, len);
    let mut input = project(&p.w_g, &p.b_g, xs, len);
    let mut output = project(&p.w_o, &p.b_o, xs, len);
    let mut candidate = project(&p.w_s, &p.b_s, xs, len);
    let mut s = vec![0.0; len * hidden];
    let mut h = vec![0.0; len * hidden];
    let zeros = vec![0.0; hidden];
    let mut hp = vec![0.0; hidden];
    let mut sp = vec![0.0; hidden];

    for k in 0..len {
        let t = time_of(k, len, reverse);
        let rows = t * hidden..(t + 1) * hidden;
        match prev_time(t, len, reverse) {
            Some(pt) => {
                hp.copy_from_slice(&h[pt * hidden..(pt + 1) * hidden]);
                sp.copy_from_slice(&s[pt * hidden..(pt + 1) * hidden]);
            }
            None => {
                hp.copy_from_slice(&zeros);
                sp.copy_from_slice(&zeros);
            }
        }
        let f = &mut forget[rows.clone()];
        matvec_acc(&p.w_f, 0, &hp, f);
        f.iter_mut().for_each(|v| *v = sigmoid(*v));
        let g = &mut input[rows.clone()];
        matvec_acc(&p.w_g, 0, &hp, g);
        g.iter_mut().for_each(|v| *v = sigmoid(*v));
        let o = &mut output[rows.clone()];
        matvec_acc(&p.w_o, 0, &hp, o);
        o.iter_mut().for_each(|v| *v = sigmoid(*v));
        let c = &mut candidate[rows.clone()];
        matvec_acc(&p.w_s, 0, &hp, c);
        c.iter_mut().for_each(|v| *v = v.tanh());
        for i in 0..hidden {
            let st = f[i] * sp[i] + g[i] * c[i];
            s[t * hidden + i] = st;
            h[t * hidden + i] = o[i] * st.tanh();
        }
    }
    LstmTrace {
        forget,
        input,
        output,
        candidate,
        s,
        h,
    }
}

/// Backpropagates `dhs` (gradient on this direction's outputs, `len × H`,
/// time order) into `grad` and `dxs` (`len × D`). With `bptt = Some(k)` the
/// gradient carried through the recurrent state is cut every `k` processed
/// steps.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop_direction(
    cell: &CellParams,
    grad: &mut CellParams,
    trace: &DirectionTrace,
    xs: &[f64],
    len: usize,
    reverse: bool,
    dhs: &[f64],
    dxs: &mut [f64],
    bptt: Option<usize>,
) {
    match (cell, grad, trace) {
        (CellParams::Gru(p), CellParams::Gru(g), DirectionTrace::Gru(tr)) => {
            backprop_gru(p, g, tr, xs, len, reverse, dhs, dxs, bptt)
        }
        (CellParams::Lstm(p), CellParams::Lstm(g), DirectionTrace::Lstm(tr)) => {
            backprop_lstm(p, g, tr, xs, len, reverse, dhs, dxs, bptt)
        }
        _ => panic!("cell kind mismatch between parameters, gradients and trace"),
    }
}

#[inline]
fn cut(k: usize, bptt: Option<usize>) -> bool {
    matches!(bptt, Some(w) if w > 0 && k % w == 0)
}

#[allow(clippy::too_many_arguments)]
fn backprop_gru(
    p: &GruCellParams,
    g: &mut GruCellParams,
    tr: &GruTrace,
    xs: &[f64],
    len: usize,
    reverse: bool,
    dhs: &[f64],
    dxs: &mut [f64],
    bptt: Option<usize>,
) {
    let hidden = p.hidden();
    let states = shifted_states(&tr.h, len, hidden, reverse);
    let mut da_u = vec![0.0; len * hidden];
    let mut da_r = vec![0.0; len * hidden];
    let mut da_h = vec![0.0; len * hidden];
    let mut carry = vec![0.0; hidden];
    let mut dh = vec![0.0; hidden];
    let mut d_gated = vec![0.0; hidden];

    for k in (0..len).rev() {
        let t = time_of(k, len, reverse);
        let rows = t * hidden..(t + 1) * hidden;
        let hp = &states[rows.clone()];
        let u = &tr.update[rows.clone()];
        let r = &tr.reset[rows.clone()];
        let c = &tr.candidate[rows.clone()];
        for i in 0..hidden {
            dh[i] = dhs[t * hidden + i] + carry[i];
        }

        let (au, ar, ah) = (&mut da_u[rows.clone()], &mut da_r[rows.clone()], &mut da_h[rows.clone()]);
        for i in 0..hidden {
            ah[i] = dh[i] * u[i] * (1.0 - c[i] * c[i]);
            au[i] = dh[i] * (c[i] - hp[i]) * u[i] * (1.0 - u[i]);
            carry[i] = dh[i] * (1.0 - u[i]);
        }
        d_gated.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&p.w_h, 0, ah, &mut d_gated);
        for i in 0..hidden {
            ar[i] = d_gated[i] * hp[i] * r[i] * (1.0 - r[i]);
            carry[i] += d_gated[i] * r[i];
        }
        matvec_t_acc(&p.w_u, 0, au, &mut carry);
        matvec_t_acc(&p.w_r, 0, ar, &mut carry);
        if cut(k, bptt) {
            carry.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    let gated_states: Vec<f64> = states.iter().zip(&tr.reset).map(|(h, r)| h * r).collect();
    accumulate_weight_grad(&mut g.w_u, &mut g.b_u, &da_u, &states, xs, len);
    accumulate_weight_grad(&mut g.w_r, &mut g.b_r, &da_r, &states, xs, len);
    accumulate_weight_grad(&mut g.w_h, &mut g.b_h, &da_h, &gated_states, xs, len);
    accumulate_input_grad(dxs, &da_u, &p.w_u, len);
    accumulate_input_grad(dxs, &da_r, &p.w_r, len);
    accumulate_input_grad(dxs, &da_h, &p.w_h, len);
}

#[allow(clippy::too_many_arguments)]
fn backprop_lstm(
    p: &LstmCellParams,
    g: &mut LstmCellParams,
    tr: &LstmTrace,
    xs: &[f64],
    len: usize,
    reverse: bool,
    dhs: &[f64],
    dxs: &mut [f64],
    bptt: Option<usize>,
) {
    let hidden = p.hidden();
    let states = shifted_states(&tr.h, len, hidden, reverse);
    let prev_s = shifted_states(&tr.s, len, hidden, reverse);
    let mut da_f = vec![0.0; len * hidden];
    let mut da_g = vec![0.0; len * hidden];
    let mut da_s = vec![0.0; len * hidden];
    let mut da_o = vec![0.0; len * hidden];
    let mut carry_h = vec![0.0; hidden];
    let mut carry_s = vec![0.0; hidden];

    for k in (0..len).rev() {
        let t = time_of(k, len, reverse);
        let rows = t * hidden..(t + 1) * hidden;
        let sp = &prev_s[rows.clone()];
        let f = &tr.forget[rows.clone()];
        let gi = &tr.input[rows.clone()];
        let o = &tr.output[rows.clone()];
        let c = &tr.candidate[rows.clone()];
        let s = &tr.s[rows.clone()];
        let (af, ag) = (&mut da_f[rows.clone()], &mut da_g[rows.clone()]);
        let (as_, ao) = (&mut da_s[rows.clone()], &mut da_o[rows.clone()]);
        for i in 0..hidden {
            let dh = dhs[t * hidden + i] + carry_h[i];
            let ts = s[i].tanh();
            let ds = carry_s[i] + dh * o[i] * (1.0 - ts * ts);
            ao[i] = dh * ts * o[i] * (1.0 - o[i]);
            af[i] = ds * sp[i] * f[i] * (1.0 - f[i]);
            ag[i] = ds * c[i] * gi[i] * (1.0 - gi[i]);
            as_[i] = ds * gi[i] * (1.0 - c[i] * c[i]);
            carry_s[i] = ds * f[i];
        }
        carry_h.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&p.w_f, 0, af, &mut carry_h);
        matvec_t_acc(&p.w_g, 0, ag, &mut carry_h);
        matvec_t_acc(&p.w_s, 0, as_, &mut carry_h);
        matvec_t_acc(&p.w_o, 0, ao, &mut carry_h);
        if cut(k, bptt) {
            carry_h.iter_mut().for_each(|v| *v = 0.0);
            carry_s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    accumulate_weight_grad(&mut g.w_f, &mut g.b_f, &da_f, &states, xs, len);
    accumulate_weight_grad(&mut g.w_g, &mut g.b_g, &da_g, &states, xs, len);
    accumulate_weight_grad(&mut g.w_s, &mut g.b_s, &da_s, &states, xs, len);
    accumulate_weight_grad(&mut g.w_o, &mut g.b_o, &da_o, &states, xs, len);
    accumulate_input_grad(dxs, &da_f, &p.w_f, len);
    accumulate_input_grad(dxs, &da_g, &p.w_g, len);
    accumulate_input_grad(dxs, &da_s, &p.w_s, len);
    accumulate_input_grad(dxs, &da_o, &p.w_o, len);
}
