use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::PreparedSequence;
use crate::rnn::{backward_accumulate, forward, BackwardOptions, ModelParams, Probs};
use crate::signal_io::Stage;

/// Zero-padded mini-batch in time-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `t_max × batch × width`, index `(t * batch + b) * width + d`.
    pub inputs: Vec<f64>,
    pub width: usize,
    pub lengths: Vec<usize>,
    /// `t_max × batch`; padded entries hold an arbitrary label.
    pub targets: Vec<Stage>,
    /// `t_max × batch`; true exactly on real steps.
    pub loss_mask: Vec<bool>,
    pub patient_ids: Vec<String>,
}

impl Batch {
    /// Pads `seqs` to the longest one.
    pub fn from_sequences(seqs: &[&PreparedSequence]) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
        let width = first.width;
        if let Some(s) = seqs.iter().find(|s| s.width != width) {
            return Err(Error::Shape(format!(
                "sequence `{}` has width {}, batch width is {width}",
                s.patient_id, s.width
            )));
        }
        let mut seen = HashSet::new();
        if let Some(s) = seqs.iter().find(|s| !seen.insert(s.patient_id.as_str())) {
            return Err(Error::Invalid(format!("patient `{}` appears twice in one batch", s.patient_id)));
        }
        let b = seqs.len();
        let t_max = seqs.iter().map(|s| s.length).max().unwrap_or(0);
        let mut inputs = vec![0.0; t_max * b * width];
        let mut targets = vec![Stage::Sleep; t_max * b];
        let mut loss_mask = vec![false; t_max * b];
        for (j, s) in seqs.iter().enumerate() {
            for t in 0..s.length {
                let at = (t * b + j) * width;
                inputs[at..at + width].copy_from_slice(s.step(t));
                targets[t * b + j] = s.targets[t];
                loss_mask[t * b + j] = true;
            }
        }
        Ok(Self {
            inputs,
            width,
            lengths: seqs.iter().map(|s| s.length).collect(),
            targets,
            loss_mask,
            patient_ids: seqs.iter().map(|s| s.patient_id.clone()).collect(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn t_max(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn padded_steps(&self) -> usize {
        let t_max = self.t_max();
        self.lengths.iter().map(|&l| t_max - l).sum()
    }

    /// Column `b` as a `t_max × width` row-major sequence, padding included.
    pub fn column_inputs(&self, b: usize) -> Vec<f64> {
        let bs = self.batch_size();
        let w = self.width;
        let mut out = Vec::with_capacity(self.t_max() * w);
        for t in 0..self.t_max() {
            let at = (t * bs + b) * w;
            out.extend_from_slice(&self.inputs[at..at + w]);
        }
        out
    }

    pub fn column_targets(&self, b: usize) -> Vec<Stage> {
        let bs = self.batch_size();
        (0..self.t_max()).map(|t| self.targets[t * bs + b]).collect()
    }

    pub fn column_mask(&self, b: usize) -> Vec<bool> {
        let bs = self.batch_size();
        (0..self.t_max()).map(|t| self.loss_mask[t * bs + b]).collect()
    }
}

/// Sorts by length (longest first), groups consecutive runs of `batch_size`
/// and shuffles the batch order with `seed`.
pub fn make_batches(sequences: &[PreparedSequence], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if sequences.is_empty() {
        return Err(Error::Invalid("no sequences to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<&PreparedSequence> = sequences.iter().collect();
    order.sort_by(|a, b| b.length.cmp(&a.length));
    let mut batches = order
        .chunks(batch_size)
        .map(Batch::from_sequences)
        .collect::<Result<Vec<_>>>()?;
    batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(batches)
}

/// Per-column class probabilities on the real steps of each sequence.
pub fn forward_batch(params: &ModelParams, batch: &Batch) -> Result<Vec<Vec<Probs>>> {
    (0..batch.batch_size())
        .map(|b| forward(params, &batch.column_inputs(b), batch.lengths[b]).map(|(p, _)| p))
        .collect()
}

/// Cross-entropy averaged over every mask-true step in the batch, and its
/// gradient.
pub fn batch_loss_and_grads(params: &ModelParams, batch: &Batch, options: BackwardOptions) -> Result<(f64, ModelParams)> {
    if batch.width != params.input_size {
        return Err(Error::Shape(format!(
            "batch width {} does not match model input size {}",
            batch.width, params.input_size
        )));
    }
    let total = batch.loss_mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return Err(Error::Invalid("batch has no supervised steps".into()));
    }
    let scale = 1.0 / total as f64;
    let mut grads = params.zeros_like();
    let mut loss_sum = 0.0;
    for b in 0..batch.batch_size() {
        let len = batch.lengths[b];
        let (_, trace) = forward(params, &batch.column_inputs(b), len)?;
        let targets = batch.column_targets(b);
        let mask = batch.column_mask(b);
        loss_sum += backward_accumulate(params, &trace, &targets[..len], &mask[..len], scale, &mut grads, options)?;
    }
    Ok((loss_sum * scale, grads))
}
