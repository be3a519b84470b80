//! Independent reference implementations used by the integration tests.
//! Everything here is written with plain loops over nested vectors and
//! shares no numeric code with the library.

#![allow(dead_code)]

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepwake::linalg::Matrix;
use sleepwake::rnn::{CellParams, GruCellParams, LstmCellParams, ModelParams};
use sleepwake::Stage;

/// Writes one criterion line straight to stdout so it shows even when the
/// harness captures test output.
pub fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Σ_j w[i][j]·v_j over the concatenation `[a, b]`.
fn row_dot(w: &Matrix, i: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, v) in a.iter().chain(b).enumerate() {
        acc += w.get(i, j) * v;
    }
    acc
}

pub fn gru_ref(p: &GruCellParams, h: &[f64], x: &[f64]) -> Vec<f64> {
    let n = h.len();
    let mut u = vec![0.0; n];
    let mut r = vec![0.0; n];
    for i in 0..n {
        u[i] = sig(row_dot(&p.w_u, i, h, x) + p.b_u[i]);
        r[i] = sig(row_dot(&p.w_r, i, h, x) + p.b_r[i]);
    }
    let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let cand = (row_dot(&p.w_h, i, &rh, x) + p.b_h[i]).tanh();
        out[i] = (1.0 - u[i]) * h[i] + u[i] * cand;
    }
    out
}

pub fn lstm_ref(p: &LstmCellParams, h: &[f64], s: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut h_new = vec![0.0; n];
    let mut s_new = vec![0.0; n];
    for i in 0..n {
        let f = sig(row_dot(&p.w_f, i, h, x) + p.b_f[i]);
        let g = sig(row_dot(&p.w_g, i, h, x) + p.b_g[i]);
        let o = sig(row_dot(&p.w_o, i, h, x) + p.b_o[i]);
        let cand = (row_dot(&p.w_s, i, h, x) + p.b_s[i]).tanh();
        s_new[i] = f * s[i] + g * cand;
        h_new[i] = o * s_new[i].tanh();
    }
    (h_new, s_new)
}

/// One direction over `xs` (a list of step vectors), outputs in time order.
fn direction_ref(cell: &CellParams, xs: &[Vec<f64>], hidden: usize, reverse: bool) -> Vec<Vec<f64>> {
    let len = xs.len();
    let mut out = vec![Vec::new(); len];
    let mut h = vec![0.0; hidden];
    let mut s = vec![0.0; hidden];
    for k in 0..len {
        let t = if reverse { len - 1 - k } else { k };
        match cell {
            CellParams::Gru(p) => h = gru_ref(p, &h, &xs[t]),
            CellParams::Lstm(p) => {
                let (hn, sn) = lstm_ref(p, &h, &s, &xs[t]);
                h = hn;
                s = sn;
            }
        }
        out[t] = h.clone();
    }
    out
}

/// Full network on a list of step vectors: per-step `[p_W, p_S]`.
pub fn model_ref(p: &ModelParams, xs: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let hidden = p.hidden_size;
    let mut layer_in = xs.to_vec();
    for layer in [&p.layer1, &p.layer2] {
        let f = direction_ref(&layer.forward, &layer_in, hidden, false);
        let b = direction_ref(&layer.backward, &layer_in, hidden, true);
        layer_in = f.into_iter().zip(b).map(|(mut a, b)| {
            a.extend(b);
            a
        }).collect();
    }
    layer_in
        .iter()
        .map(|x| {
            let y: Vec<f64> = (0..2)
                .map(|c| {
                    let z: f64 = (0..x.len()).map(|j| p.head.w.get(c, j) * x[j]).sum::<f64>() + p.head.b[c];
                    z.max(0.0)
                })
                .collect();
            let e: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
        })
        .collect()
}

pub fn steps(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

/// Mean masked cross-entropy from reference probabilities.
pub fn loss_ref(p: &ModelParams, xs: &[Vec<f64>], targets: &[Stage], mask: &[bool]) -> f64 {
    let probs = model_ref(p, xs);
    let mut sum = 0.0;
    let mut n = 0;
    for t in 0..xs.len() {
        if mask[t] {
            sum -= probs[t][targets[t].index()].ln();
            n += 1;
        }
    }
    sum / n as f64
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_stages(rng: &mut ChaCha8Rng, n: usize, p_sleep: f64) -> Vec<Stage> {
    (0..n)
        .map(|_| if rng.random_bool(p_sleep) { Stage::Sleep } else { Stage::Wake })
        .collect()
}

/// Perturbs every parameter by uniform noise of the given scale.
pub fn jitter(p: &mut ModelParams, rng: &mut ChaCha8Rng, scale: f64) {
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

// Brute-force hypnogram and metric references.

pub fn vote_ref(per_second: &[Stage]) -> Vec<Stage> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < per_second.len() {
        let mut wake = 0;
        let mut sleep = 0;
        for s in &per_second[i..i + 30] {
            match s {
                Stage::Wake => wake += 1,
                Stage::Sleep => sleep += 1,
            }
        }
        out.push(if wake > sleep { Stage::Wake } else { Stage::Sleep });
        i += 30;
    }
    out
}

/// (tp, fp, tn, fn) with wake positive.
pub fn counts_ref(reference: &[Stage], predicted: &[Stage]) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (r, p) in reference.iter().zip(predicted) {
        match (r, p) {
            (Stage::Wake, Stage::Wake) => tp += 1,
            (Stage::Sleep, Stage::Wake) => fp += 1,
            (Stage::Sleep, Stage::Sleep) => tn += 1,
            (Stage::Wake, Stage::Sleep) => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

/// Fractions: acc, se, sp, prec, npv, kappa; `None` where undefined.
pub fn metrics_ref(tp: usize, fp: usize, tn: usize, fn_: usize) -> [Option<f64>; 6] {
    let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    let n = (tp + fp + tn + fn_) as f64;
    let po = (tp + tn) as f64 / n;
    // Chance agreement from both raters' marginals.
    let ref_w = (tp + fn_) as f64 / n;
    let pred_w = (tp + fp) as f64 / n;
    let pe = ref_w * pred_w + (1.0 - ref_w) * (1.0 - pred_w);
    let kappa = if pe == 1.0 { None } else { Some((po - pe) / (1.0 - pe)) };
    [
        Some(po),
        ratio(tp, tp + fn_),
        ratio(tn, tn + fp),
        ratio(tp, tp + fp),
        ratio(tn, tn + fn_),
        kappa,
    ]
}

/// E1 in minutes and E2 in percent, averaged over patients.
pub fn tst_ref(pairs: &[(f64, f64)]) -> (f64, f64) {
    let mut e1 = 0.0;
    let mut e2 = 0.0;
    for &(tst, hat) in pairs {
        e1 += (tst - hat).abs();
        e2 += (tst - hat).abs() / tst * 100.0;
    }
    (e1 / pairs.len() as f64, e2 / pairs.len() as f64)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
