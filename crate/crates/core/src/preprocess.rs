//! Quality masking, gap filling and global standardization.
//!
//! The order is fixed: samples flagged by the quality signal are replaced by
//! linear interpolation between the surrounding good samples, then each
//! channel is standardized with statistics fitted on the train split only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{OximetryRecord, Stage, WINDOW_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Per-channel mean and population standard deviation of the train split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub hr: ChannelStats,
    pub spo2: ChannelStats,
}

impl StandardizationStats {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("hr", self.hr), ("spo2", self.spo2)] {
            if !c.mean.is_finite() || !c.std.is_finite() || c.std <= 0.0 {
                return Err(Error::Preprocess(format!(
                    "invalid {name} statistics: mean={}, std={}",
                    c.mean, c.std
                )));
            }
        }
        Ok(())
    }
}

/// Which signals feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum InputsMode {
    #[serde(rename = "hr")]
    Hr,
    #[default]
    #[serde(rename = "hr+spo2")]
    HrSpo2,
}

impl InputsMode {
    pub fn width(self) -> usize {
        match self {
            InputsMode::Hr => 1,
            InputsMode::HrSpo2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputsMode::Hr => "hr",
            InputsMode::HrSpo2 => "hr+spo2",
        }
    }
}

impl std::str::FromStr for InputsMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hr" => Ok(InputsMode::Hr),
            "hr+spo2" => Ok(InputsMode::HrSpo2),
            other => Err(format!("unknown inputs mode `{other}` (expected hr or hr+spo2)")),
        }
    }
}

/// Network-ready sequence: standardized inputs and per-second targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSequence {
    pub patient_id: String,
    /// Row-major `length × width`; column 0 is HR, column 1 (if present) SpO₂.
    pub inputs: Vec<f64>,
    pub width: usize,
    pub targets: Vec<Stage>,
    pub length: usize,
}

impl PreparedSequence {
    /// Builds a sequence from explicit parts, checking the shape invariants.
    pub fn new(patient_id: impl Into<String>, inputs: Vec<f64>, width: usize, targets: Vec<Stage>) -> Result<Self> {
        let length = targets.len();
        let patient_id = patient_id.into();
        if width == 0 || inputs.len() != length * width {
            return Err(Error::Shape(format!(
                "sequence `{patient_id}`: {} input values for {length} steps of width {width}",
                inputs.len()
            )));
        }
        if length == 0 || length % WINDOW_SECONDS != 0 {
            return Err(Error::Shape(format!(
                "sequence `{patient_id}`: length {length} is not a positive multiple of {WINDOW_SECONDS}"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sequence `{patient_id}` has non-finite inputs")));
        }
        Ok(Self {
            patient_id,
            inputs,
            width,
            targets,
            length,
        })
    }

    #[inline]
    pub fn step(&self, t: usize) -> &[f64] {
        &self.inputs[t * self.width..(t + 1) * self.width]
    }

    /// Reference hypnogram labels: one per 30-second window, taken from the
    /// first second of each window.
    pub fn window_targets(&self) -> Vec<Stage> {
        self.targets.iter().step_by(WINDOW_SECONDS).copied().collect()
    }
}

/// Replaces bad-quality samples by linear interpolation between the nearest
/// good neighbours; leading and trailing bad runs hold the nearest good value.
pub fn mask_and_interpolate(record: &OximetryRecord) -> Result<OximetryRecord> {
    let good: Vec<usize> = record
        .quality
        .iter()
        .enumerate()
        .filter_map(|(i, &q)| q.then_some(i))
        .collect();
    if good.is_empty() {
        return Err(Error::Preprocess(format!(
            "record `{}` has no good-quality samples",
            record.patient_id
        )));
    }
    let mut out = record.clone();
    fill_channel(&mut out.hr, &good);
    fill_channel(&mut out.spo2, &good);
    out.quality.iter_mut().for_each(|q| *q = true);
    Ok(out)
}

fn fill_channel(values: &mut [f64], good: &[usize]) {
    let first = good[0];
    let last = *good.last().expect("nonempty");
    let head = values[first];
    values[..first].iter_mut().for_each(|v| *v = head);
    let tail = values[last];
    values[last + 1..].iter_mut().for_each(|v| *v = tail);

    for pair in good.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 2 {
            continue;
        }
        let (va, vb) = (values[a], values[b]);
        let span = (b - a) as f64;
        for i in a + 1..b {
            let w = (i - a) as f64 / span;
            values[i] = va + w * (vb - va);
        }
    }
}

/// Pooled mean and population std over every sample of every record, taken
/// after bad-quality samples are interpolated.
pub fn fit_standardization(train_records: &[OximetryRecord]) -> Result<StandardizationStats> {
    if train_records.is_empty() {
        return Err(Error::Preprocess("no training records to fit standardization".into()));
    }
    let filled = train_records
        .iter()
        .map(mask_and_interpolate)
        .collect::<Result<Vec<_>>>()?;
    let hr = pooled_stats(filled.iter().map(|r| r.hr.as_slice()), "hr")?;
    let spo2 = pooled_stats(filled.iter().map(|r| r.spo2.as_slice()), "spo2")?;
    Ok(StandardizationStats { hr, spo2 })
}

fn pooled_stats<'a>(channels: impl Iterator<Item = &'a [f64]> + Clone, name: &str) -> Result<ChannelStats> {
    let n: usize = channels.clone().map(<[f64]>::len).sum();
    if n == 0 {
        return Err(Error::Preprocess(format!("{name}: no samples")));
    }
    let mean = channels.clone().flatten().sum::<f64>() / n as f64;
    let var = channels.flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Preprocess(format!("{name}: zero variance across training records")));
    }
    Ok(ChannelStats { mean, std })
}

/// Mask, interpolate, standardize and expand window labels to seconds.
pub fn prepare(record: &OximetryRecord, stats: &StandardizationStats, mode: InputsMode) -> Result<PreparedSequence> {
    stats.validate()?;
    let filled = mask_and_interpolate(record)?;
    let width = mode.width();
    let mut inputs = Vec::with_capacity(filled.len() * width);
    for i in 0..filled.len() {
        inputs.push(stats.hr.apply(filled.hr[i]));
        if mode == InputsMode::HrSpo2 {
            inputs.push(stats.spo2.apply(filled.spo2[i]));
        }
    }
    PreparedSequence::new(filled.patient_id.clone(), inputs, width, filled.per_second_stages())
}

/// Prepares every record with the same statistics.
pub fn prepare_all(records: &[OximetryRecord], stats: &StandardizationStats, mode: InputsMode) -> Result<Vec<PreparedSequence>> {
    records.iter().map(|r| prepare(r, stats, mode)).collect()
}
