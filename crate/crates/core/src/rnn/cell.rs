//! Single-step cell updates.
//!
//! These are the reference forms of the recurrences. Whole sequences are run
//! by the batched kernels in `layer`, which must agree with repeated calls of
//! these functions.

use crate::error::{Error, Result};
use crate::linalg::{matvec_acc, sigmoid};

use super::params::{GruCellParams, LstmCellParams};

fn check(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Shape(format!("{name}: expected length {len}, got {}", v.len())));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{name}[{i}] = {}", v[i])));
    }
    Ok(())
}

/// Affine pre-activation `W·[a, x] + b`.
fn affine(w: &crate::linalg::Matrix, b: &[f64], a: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    matvec_acc(w, 0, a, &mut out);
    matvec_acc(w, a.len(), x, &mut out);
    out
}

/// Gate values from one GRU step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

/// One GRU step. The reset gate scales only the previous-state block of the
/// candidate's input: `h̃ = tanh(W_h·[r⊙h_prev, x] + b_h)`.
pub fn gru_cell_step(params: &GruCellParams, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Ok(gru_cell_step_full(params, h_prev, x)?.h)
}

pub fn gru_cell_step_full(params: &GruCellParams, h_prev: &[f64], x: &[f64]) -> Result<GruStep> {
    check("h_prev", h_prev, params.hidden())?;
    check("x", x, params.input())?;
    let update: Vec<f64> = affine(&params.w_u, &params.b_u, h_prev, x).into_iter().map(sigmoid).collect();
    let reset: Vec<f64> = affine(&params.w_r, &params.b_r, h_prev, x).into_iter().map(sigmoid).collect();
    let gated: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let candidate: Vec<f64> = affine(&params.w_h, &params.b_h, &gated, x).into_iter().map(f64::tanh).collect();
    let h = (0..h_prev.len())
        .map(|i| (1.0 - update[i]) * h_prev[i] + update[i] * candidate[i])
        .collect();
    Ok(GruStep {
        update,
        reset,
        candidate,
        h,
    })
}

/// One LSTM step; returns the new output and internal state `(h, s)`.
pub fn lstm_cell_step(params: &LstmCellParams, h_prev: &[f64], s_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let hidden = params.hidden();
    check("h_prev", h_prev, hidden)?;
    check("s_prev", s_prev, hidden)?;
    check("x", x, params.input())?;
    let f: Vec<f64> = affine(&params.w_f, &params.b_f, h_prev, x).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = affine(&params.w_g, &params.b_g, h_prev, x).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = affine(&params.w_o, &params.b_o, h_prev, x).into_iter().map(sigmoid).collect();
    let cand: Vec<f64> = affine(&params.w_s, &params.b_s, h_prev, x).into_iter().map(f64::tanh).collect();
    let s: Vec<f64> = (0..hidden).map(|i| f[i] * s_prev[i] + g[i] * cand[i]).collect();
    let h = (0..hidden).map(|i| o[i] * s[i].tanh()).collect();
    Ok((h, s))
}
