//! Full-model evaluation and backpropagation through time.

use crate::error::{Error, Result};
use crate::linalg::{gemm, View};
use crate::signal_io::Stage;

use super::layer::{backprop_direction, run_direction, DirectionTrace};
use super::params::{BiLayerParams, ModelParams};

/// Class probabilities for one step, ordered (W, S).
pub type Probs = [f64; 2];

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    length: usize,
    hidden: usize,
    x0: Vec<f64>,
    layer1: [DirectionTrace; 2],
    x1: Vec<f64>,
    layer2: [DirectionTrace; 2],
    x2: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<Probs>,
}

impl ForwardTrace {
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn probs(&self) -> &[Probs] {
        &self.probs
    }

    /// Pre-activation head outputs, `length × 2`.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Concatenated bidirectional output of the top layer, `length × 2H`.
    pub fn top_features(&self) -> &[f64] {
        &self.x2
    }
}

/// Softmax over `relu(z)` for two logits, with max-subtraction.
#[inline]
fn head_probs(z: &[f64]) -> Probs {
    let y0 = z[0].max(0.0);
    let y1 = z[1].max(0.0);
    let m = y0.max(y1);
    let e0 = (y0 - m).exp();
    let e1 = (y1 - m).exp();
    let sum = e0 + e1;
    [e0 / sum, e1 / sum]
}

/// `−log softmax(relu(z))[target]` in log-sum-exp form.
#[inline]
fn head_nll(z: &[f64], target: usize) -> f64 {
    let y0 = z[0].max(0.0);
    let y1 = z[1].max(0.0);
    let m = y0.max(y1);
    let lse = m + ((y0 - m).exp() + (y1 - m).exp()).ln();
    lse - [y0, y1][target]
}

fn run_bilayer(layer: &BiLayerParams, xs: &[f64], len: usize, hidden: usize) -> ([DirectionTrace; 2], Vec<f64>) {
    let fwd = run_direction(&layer.forward, xs, len, false);
    let bwd = run_direction(&layer.backward, xs, len, true);
    let mut out = Vec::with_capacity(len * 2 * hidden);
    for t in 0..len {
        out.extend_from_slice(&fwd.hidden()[t * hidden..(t + 1) * hidden]);
        out.extend_from_slice(&bwd.hidden()[t * hidden..(t + 1) * hidden]);
    }
    ([fwd, bwd], out)
}

/// Runs the network over the first `length` steps of `inputs`
/// (row-major, `input_size` values per step). Both directions start from zero
/// state; the backward direction starts at step `length − 1`, so anything
/// past `length` is never read.
pub fn forward(params: &ModelParams, inputs: &[f64], length: usize) -> Result<(Vec<Probs>, ForwardTrace)> {
    let width = params.input_size;
    let hidden = params.hidden_size;
    if length == 0 {
        return Err(Error::Invalid("sequence length must be at least 1".into()));
    }
    if inputs.len() < length * width {
        return Err(Error::Shape(format!(
            "{} input values cannot hold {length} steps of width {width}",
            inputs.len()
        )));
    }
    let x0 = inputs[..length * width].to_vec();
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input step {} is not finite", i / width)));
    }

    let (layer1, x1) = run_bilayer(&params.layer1, &x0, length, hidden);
    let (layer2, x2) = run_bilayer(&params.layer2, &x1, length, hidden);

    let classes = Stage::COUNT;
    let mut logits = Vec::with_capacity(length * classes);
    for _ in 0..length {
        logits.extend_from_slice(&params.head.b);
    }
    gemm(
        length,
        2 * hidden,
        classes,
        1.0,
        View::rm(&x2, 0, 2 * hidden),
        View::t(params.head.w.as_slice(), 0, 2 * hidden),
        1.0,
        &mut logits,
        0,
        classes,
    );
    let probs: Vec<Probs> = logits.chunks_exact(classes).map(head_probs).collect();

    let trace = ForwardTrace {
        length,
        hidden,
        x0,
        layer1,
        x1,
        layer2,
        x2,
        logits,
        probs: probs.clone(),
    };
    Ok((probs, trace))
}

/// Options for the backward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct BackwardOptions {
    /// Cut gradient flow through recurrent state every this many steps.
    pub bptt_window: Option<usize>,
}

fn check_supervision(trace: &ForwardTrace, targets: &[Stage], loss_mask: &[bool]) -> Result<()> {
    if targets.len() != trace.length || loss_mask.len() != trace.length {
        return Err(Error::Shape(format!(
            "trace covers {} steps but got {} targets and {} mask entries",
            trace.length,
            targets.len(),
            loss_mask.len()
        )));
    }
    Ok(())
}

/// Sum of `−log p(target)` over mask-true steps, and the number of such steps.
pub fn masked_nll(trace: &ForwardTrace, targets: &[Stage], loss_mask: &[bool]) -> Result<(f64, usize)> {
    check_supervision(trace, targets, loss_mask)?;
    let mut sum = 0.0;
    let mut count = 0;
    for t in 0..trace.length {
        if loss_mask[t] {
            sum += head_nll(&trace.logits[2 * t..2 * t + 2], targets[t].index());
            count += 1;
        }
    }
    Ok((sum, count))
}

/// Accumulates `scale · ∂(Σ_masked −log p)/∂θ` into `grads` and returns the
/// unscaled masked loss sum. Used directly when one loss is pooled over
/// several sequences.
pub fn backward_accumulate(
    params: &ModelParams,
    trace: &ForwardTrace,
    targets: &[Stage],
    loss_mask: &[bool],
    scale: f64,
    grads: &mut ModelParams,
    options: BackwardOptions,
) -> Result<f64> {
    if !params.same_shape(grads) {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }
    let (loss_sum, _) = masked_nll(trace, targets, loss_mask)?;
    let len = trace.length;
    let hidden = trace.hidden;
    let two_h = 2 * hidden;

    let mut dz = vec![0.0; len * 2];
    for t in 0..len {
        if !loss_mask[t] {
            continue;
        }
        let p = trace.probs[t];
        let target = targets[t].index();
        for c in 0..2 {
            let onehot = if c == target { 1.0 } else { 0.0 };
            // relu'(z) taken as 0 at z = 0.
            if trace.logits[2 * t + c] > 0.0 {
                dz[2 * t + c] = scale * (p[c] - onehot);
            }
        }
    }

    gemm(2, len, two_h, 1.0, View::t(&dz, 0, 2), View::rm(&trace.x2, 0, two_h), 1.0, grads.head.w.as_mut_slice(), 0, two_h);
    for row in dz.chunks_exact(2) {
        grads.head.b[0] += row[0];
        grads.head.b[1] += row[1];
    }
    let mut dx2 = vec![0.0; len * two_h];
    gemm(len, 2, two_h, 1.0, View::rm(&dz, 0, 2), View::rm(params.head.w.as_slice(), 0, two_h), 0.0, &mut dx2, 0, two_h);

    let mut dx1 = vec![0.0; len * two_h];
    backprop_bilayer(&params.layer2, &mut grads.layer2, &trace.layer2, &trace.x1, len, hidden, &dx2, &mut dx1, options);
    let mut dx0 = vec![0.0; trace.x0.len()];
    backprop_bilayer(&params.layer1, &mut grads.layer1, &trace.layer1, &trace.x0, len, hidden, &dx1, &mut dx0, options);
    Ok(loss_sum)
}

#[allow(clippy::too_many_arguments)]
fn backprop_bilayer(
    layer: &BiLayerParams,
    grad: &mut BiLayerParams,
    traces: &[DirectionTrace; 2],
    xs: &[f64],
    len: usize,
    hidden: usize,
    dout: &[f64],
    dxs: &mut [f64],
    options: BackwardOptions,
) {
    let mut dhf = Vec::with_capacity(len * hidden);
    let mut dhb = Vec::with_capacity(len * hidden);
    for row in dout.chunks_exact(2 * hidden) {
        dhf.extend_from_slice(&row[..hidden]);
        dhb.extend_from_slice(&row[hidden..]);
    }
    let bptt = options.bptt_window;
    backprop_direction(&layer.forward, &mut grad.forward, &traces[0], xs, len, false, &dhf, dxs, bptt);
    backprop_direction(&layer.backward, &mut grad.backward, &traces[1], xs, len, true, &dhb, dxs, bptt);
}

/// Mean masked cross-entropy of one sequence and its exact gradient.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, targets: &[Stage], loss_mask: &[bool]) -> Result<(ModelParams, f64)> {
    check_supervision(trace, targets, loss_mask)?;
    let count = loss_mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Invalid("loss mask selects no steps".into()));
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / count as f64;
    let sum = backward_accumulate(params, trace, targets, loss_mask, scale, &mut grads, BackwardOptions::default())?;
    Ok((grads, sum * scale))
}

/// Mean masked cross-entropy without gradients.
pub fn sequence_loss(params: &ModelParams, inputs: &[f64], length: usize, targets: &[Stage], loss_mask: &[bool]) -> Result<f64> {
    let (_, trace) = forward(params, inputs, length)?;
    let (sum, count) = masked_nll(&trace, targets, loss_mask)?;
    if count == 0 {
        return Err(Error::Invalid("loss mask selects no steps".into()));
    }
    Ok(sum / count as f64)
}
