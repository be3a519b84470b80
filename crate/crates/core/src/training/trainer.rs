use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{build_report, MetricsReport};
use crate::preprocess::{InputsMode, PreparedSequence};
use crate::rnn::{init_params, BackwardOptions, CellKind, ModelParams};
use crate::staging::{predict_hypnogram, Hypnogram};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::batch::{batch_loss_and_grads, make_batches};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub cell_kind: CellKind,
    pub inputs_mode: InputsMode,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Truncate gradient flow through recurrent state to this many steps.
    pub bptt_window: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 2,
            hidden_size: 256,
            cell_kind: CellKind::Gru,
            inputs_mode: InputsMode::HrSpo2,
            seed: 0,
            adam: AdamConfig::default(),
            grad_clip: None,
            bptt_window: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if self.hidden_size == 0 {
            return fail("hidden size must be at least 1");
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return fail("Adam betas must lie in [0, 1)");
        }
        if !(a.epsilon > 0.0) {
            return fail("Adam epsilon must be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return fail("gradient clip must be positive");
        }
        if self.bptt_window == Some(0) {
            return fail("BPTT window must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Per-patient validation accuracy after majority vote, averaged, percent.
    pub val_acc: f64,
    /// Per-patient validation κ, averaged over patients where it is defined.
    pub val_kappa: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Predicted and reference hypnograms for every sequence plus their report.
pub fn evaluate_sequences(params: &ModelParams, seqs: &[PreparedSequence]) -> Result<(MetricsReport, Vec<(Hypnogram, Hypnogram)>)> {
    let pairs = seqs
        .iter()
        .map(|s| Ok((Hypnogram::reference(s)?, predict_hypnogram(params, s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((build_report(&pairs)?, pairs))
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc,val_kappa\n");
    for r in history {
        let kappa = r.val_kappa.map(|k| k.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_acc, kappa));
    }
    out
}

fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) {
    let norm = grads.norm_sq().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

pub fn train(config: &TrainConfig, train_set: &[PreparedSequence], val_set: &[PreparedSequence]) -> Result<TrainOutcome> {
    train_with_progress(config, train_set, val_set, |_| {})
}

/// Full training run with validation-accuracy model selection; `on_epoch`
/// sees each epoch's record as it completes.
pub fn train_with_progress(
    config: &TrainConfig,
    train_set: &[PreparedSequence],
    val_set: &[PreparedSequence],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid("training and validation sets must be nonempty".into()));
    }
    let width = config.inputs_mode.width();
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.width != width) {
        return Err(Error::Shape(format!(
            "sequence `{}` has {} channels; inputs mode `{}` needs {width}",
            s.patient_id,
            s.width,
            config.inputs_mode.as_str()
        )));
    }

    let mut params = init_params(config.cell_kind, config.hidden_size, width, config.seed)?;
    let mut adam = AdamState::new(&params, config.adam);
    let batches = make_batches(train_set, config.batch_size, config.seed)?;
    let options = BackwardOptions {
        bptt_window: config.bptt_window,
    };

    let mut best: Option<(ModelParams, usize, f64)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..batches.len()).collect();

    for epoch in 1..=config.epochs {
        if epoch > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (i, &bi) in order.iter().enumerate() {
            let (loss, mut grads) = batch_loss_and_grads(&params, &batches[bi], options)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, batch {} (patients {})",
                    i + 1,
                    batches[bi].patient_ids.join(", ")
                )));
            }
            if let Some(c) = config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam_step(&mut params, &grads, &mut adam)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", i + 1)))?;
            loss_sum += loss;
        }

        let (report, _) = evaluate_sequences(&params, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_acc: report.averages.acc.mean.unwrap_or(0.0),
            val_kappa: report.averages.kappa.mean,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val acc {:.3}%",
            record.train_loss,
            record.val_acc
        );
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(_, _, acc)| record.val_acc > *acc) {
            best = Some((params.clone(), epoch, record.val_acc));
        }
    }

    let (best, best_epoch, _) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}
