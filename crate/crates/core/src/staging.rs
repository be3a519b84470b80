//! Per-second predictions to 30-second hypnograms.
//!
//! Both tie rules resolve to sleep: an exact 0.5/0.5 probability pair and a
//! 15/15 window split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::PreparedSequence;
use crate::rnn::{forward, ModelParams, Probs};
use crate::signal_io::{write_atomic, Stage, WINDOW_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypnogramSource {
    Reference,
    Predicted,
}

impl HypnogramSource {
    pub fn as_str(self) -> &'static str {
        match self {
            HypnogramSource::Reference => "reference",
            HypnogramSource::Predicted => "predicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypnogram {
    pub patient_id: String,
    pub labels: Vec<Stage>,
    pub source: HypnogramSource,
}

impl Hypnogram {
    pub fn new(patient_id: impl Into<String>, labels: Vec<Stage>, source: HypnogramSource) -> Result<Self> {
        let patient_id = patient_id.into();
        if labels.is_empty() {
            return Err(Error::Invalid(format!("empty hypnogram for `{patient_id}`")));
        }
        Ok(Self {
            patient_id,
            labels,
            source,
        })
    }

    /// Reference hypnogram from a prepared sequence's targets.
    pub fn reference(seq: &PreparedSequence) -> Result<Self> {
        Self::new(seq.patient_id.clone(), seq.window_targets(), HypnogramSource::Reference)
    }

    /// Number of sleep windows.
    pub fn sleep_windows(&self) -> usize {
        self.labels.iter().filter(|&&s| s == Stage::Sleep).count()
    }

    /// Total sleep time in minutes (half a minute per sleep window).
    pub fn total_sleep_minutes(&self) -> f64 {
        self.sleep_windows() as f64 * 0.5
    }
}

/// Argmax over (W, S); exact ties go to S.
#[inline]
pub fn label_from_probs(p: &Probs) -> Stage {
    if p[0] > p[1] {
        Stage::Wake
    } else {
        Stage::Sleep
    }
}

pub fn labels_from_probs(probs: &[Probs]) -> Vec<Stage> {
    probs.iter().map(label_from_probs).collect()
}

pub fn predict_per_second(params: &ModelParams, seq: &PreparedSequence) -> Result<Vec<Stage>> {
    if seq.width != params.input_size {
        return Err(Error::Shape(format!(
            "sequence `{}` has {} input channels, model expects {}",
            seq.patient_id, seq.width, params.input_size
        )));
    }
    let (probs, _) = forward(params, &seq.inputs, seq.length)?;
    Ok(labels_from_probs(&probs))
}

/// Labels each `window`-second block by strict majority; even splits go to S.
pub fn majority_vote(per_second: &[Stage], window: usize) -> Result<Vec<Stage>> {
    if window == 0 || per_second.len() % window != 0 {
        return Err(Error::Invalid(format!(
            "{} per-second labels do not split into {window}-second windows",
            per_second.len()
        )));
    }
    Ok(per_second
        .chunks_exact(window)
        .map(|chunk| {
            let wake = chunk.iter().filter(|&&s| s == Stage::Wake).count();
            if 2 * wake > window {
                Stage::Wake
            } else {
                Stage::Sleep
            }
        })
        .collect())
}

/// Predicted hypnogram for one sequence: per-second argmax, then the vote.
pub fn predict_hypnogram(params: &ModelParams, seq: &PreparedSequence) -> Result<Hypnogram> {
    let per_second = predict_per_second(params, seq)?;
    let labels = majority_vote(&per_second, WINDOW_SECONDS)?;
    Hypnogram::new(seq.patient_id.clone(), labels, HypnogramSource::Predicted)
}

pub fn render_hypnogram_csv(h: &Hypnogram) -> String {
    let mut out = String::from("window_index,start_second,label\n");
    for (i, label) in h.labels.iter().enumerate() {
        out.push_str(&format!("{i},{},{label}\n", i * WINDOW_SECONDS));
    }
    out
}

pub fn write_hypnogram_csv(h: &Hypnogram, path: &Path) -> Result<()> {
    write_atomic(path, render_hypnogram_csv(h).as_bytes())
}

pub fn read_hypnogram_csv(path: &Path, patient_id: &str, source: HypnogramSource) -> Result<Hypnogram> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("window_index,start_second,label") {
        return Err(Error::Invalid(format!("{}: missing hypnogram header", path.display())));
    }
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let ok = fields.len() == 3
            && fields[0].parse::<usize>().ok() == Some(i)
            && fields[1].parse::<usize>().ok() == Some(i * WINDOW_SECONDS);
        if !ok {
            return Err(Error::Invalid(format!("{}: malformed row {}", path.display(), i + 1)));
        }
        labels.push(fields[2].parse().map_err(Error::Invalid)?);
    }
    Hypnogram::new(patient_id, labels, source)
}
