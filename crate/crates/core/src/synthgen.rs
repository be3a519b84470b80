//! Synthetic stage-annotated oximetry.
//!
//! Each patient gets an alternating wake/sleep bout sequence (geometric bout
//! lengths counted in 30-second windows). Heart rate sits at a per-subject
//! baseline while awake and drops by a fixed amount while asleep, with
//! Gaussian noise expressed in the device's 3-bpm steps. SpO₂ stays at
//! baseline except for desaturation events, which only start inside sleep
//! bouts and only when they fit entirely within sleep windows: a linear decay
//! followed by a fast linear recovery. When an event recovers, the following
//! window is turned into a brief awakening with a fixed probability. Sensor
//! dropouts mark short stretches as bad quality and replace them with
//! artifact values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{DatasetManifest, OximetryRecord, Split, Stage, WINDOW_SECONDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub patients: usize,
    pub duration_min_s: usize,
    pub duration_max_s: usize,
    /// Mean wake bout length, in windows.
    pub wake_bout_mean_windows: f64,
    /// Mean sleep bout length, in windows.
    pub sleep_bout_mean_windows: f64,
    pub hr_baseline_mean: f64,
    pub hr_baseline_std: f64,
    pub hr_sleep_drop: f64,
    pub hr_noise_std: f64,
    pub hr_quantum: f64,
    pub spo2_baseline: f64,
    /// Desaturation events per hour of sleep.
    pub desat_rate_per_hour: f64,
    pub desat_depth_min: f64,
    pub desat_depth_max: f64,
    pub desat_decay_min_s: usize,
    pub desat_decay_max_s: usize,
    pub desat_recovery_min_s: usize,
    pub desat_recovery_max_s: usize,
    pub spo2_quantum: f64,
    pub awakening_probability: f64,
    /// Dropout segments per hour of recording.
    pub dropout_rate_per_hour: f64,
    pub dropout_min_s: usize,
    pub dropout_max_s: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            patients: 40,
            duration_min_s: 3600,
            duration_max_s: 7200,
            wake_bout_mean_windows: 5.0,
            sleep_bout_mean_windows: 14.0,
            hr_baseline_mean: 70.0,
            hr_baseline_std: 5.0,
            hr_sleep_drop: 7.0,
            hr_noise_std: 3.0,
            hr_quantum: 3.0,
            spo2_baseline: 97.0,
            desat_rate_per_hour: 20.0,
            desat_depth_min: 4.0,
            desat_depth_max: 8.0,
            desat_decay_min_s: 20,
            desat_decay_max_s: 40,
            desat_recovery_min_s: 5,
            desat_recovery_max_s: 10,
            spo2_quantum: 1.0,
            awakening_probability: 0.3,
            dropout_rate_per_hour: 2.0,
            dropout_min_s: 10,
            dropout_max_s: 60,
            seed: 0,
        }
    }
}

pub const SPO2_FLOOR: f64 = 70.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patients == 0 {
            return fail("patient count must be at least 1".into());
        }
        if self.duration_min_s < WINDOW_SECONDS || self.duration_max_s < self.duration_min_s {
            return fail(format!(
                "duration range [{}, {}] s must be ordered and at least {WINDOW_SECONDS} s",
                self.duration_min_s, self.duration_max_s
            ));
        }
        if !(self.wake_bout_mean_windows >= 1.0) || !(self.sleep_bout_mean_windows >= 1.0) {
            return fail("mean bout lengths must be at least one window".into());
        }
        for (name, v) in [
            ("hr_baseline_std", self.hr_baseline_std),
            ("hr_noise_std", self.hr_noise_std),
            ("desat_rate_per_hour", self.desat_rate_per_hour),
            ("dropout_rate_per_hour", self.dropout_rate_per_hour),
            ("hr_sleep_drop", self.hr_sleep_drop),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(self.hr_quantum > 0.0) || !(self.spo2_quantum > 0.0) {
            return fail("quantization steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.awakening_probability) {
            return fail("awakening probability must lie in [0, 1]".into());
        }
        if !(0.0 <= self.desat_depth_min && self.desat_depth_min <= self.desat_depth_max) {
            return fail("desaturation depth range must be ordered and non-negative".into());
        }
        for (name, lo, hi) in [
            ("desat_decay", self.desat_decay_min_s, self.desat_decay_max_s),
            ("desat_recovery", self.desat_recovery_min_s, self.desat_recovery_max_s),
            ("dropout", self.dropout_min_s, self.dropout_max_s),
        ] {
            if lo == 0 || hi < lo {
                return fail(format!("{name} duration range [{lo}, {hi}] must be positive and ordered"));
            }
        }
        let lowest_hr = self.hr_baseline_mean - self.hr_sleep_drop - 6.0 * (self.hr_baseline_std + self.hr_noise_std);
        let highest_hr = self.hr_baseline_mean + 6.0 * (self.hr_baseline_std + self.hr_noise_std);
        if lowest_hr <= 0.0 || highest_hr >= 300.0 {
            return fail("heart-rate parameters would leave the (0, 300) bpm range".into());
        }
        if !(SPO2_FLOOR..=100.0).contains(&self.spo2_baseline) {
            return fail(format!("SpO2 baseline must lie in [{SPO2_FLOOR}, 100]"));
        }
        Ok(())
    }
}

/// Generator-side ground truth for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPatient {
    pub record: OximetryRecord,
    /// Subject HR level while awake, bpm.
    pub hr_baseline: f64,
    /// `true` on seconds inside a desaturation event.
    pub in_desaturation: Vec<bool>,
    pub desaturation_events: usize,
    pub awakenings: usize,
}

pub fn patient_id(index: usize) -> String {
    format!("synth-{index:04}")
}

pub fn generate(config: &SynthConfig) -> Result<Vec<OximetryRecord>> {
    Ok(generate_with_truth(config)?.into_iter().map(|p| p.record).collect())
}

pub fn generate_with_truth(config: &SynthConfig) -> Result<Vec<SyntheticPatient>> {
    config.validate()?;
    (0..config.patients).map(|i| generate_patient(config, i)).collect()
}

fn quantize(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Geometric bout length in windows with the given mean (at least one).
fn bout_length(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let geo = Geometric::new(1.0 / mean).expect("probability in (0, 1]");
    1 + geo.sample(rng) as usize
}

/// One patient, deterministic in `(config.seed, index)`.
pub fn generate_patient(config: &SynthConfig, index: usize) -> Result<SyntheticPatient> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let min_w = config.duration_min_s / WINDOW_SECONDS;
    let max_w = (config.duration_max_s / WINDOW_SECONDS).max(min_w);
    let windows = rng.random_range(min_w..=max_w);
    let n = windows * WINDOW_SECONDS;

    let mut stages = Vec::with_capacity(windows);
    let mut state = Stage::Wake;
    while stages.len() < windows {
        let mean = match state {
            Stage::Wake => config.wake_bout_mean_windows,
            Stage::Sleep => config.sleep_bout_mean_windows,
        };
        let len = bout_length(&mut rng, mean).min(windows - stages.len());
        stages.extend(std::iter::repeat_n(state, len));
        state = match state {
            Stage::Wake => Stage::Sleep,
            Stage::Sleep => Stage::Wake,
        };
    }

    let baseline_dist = Normal::new(config.hr_baseline_mean, config.hr_baseline_std).expect("finite std");
    let hr_baseline = baseline_dist.sample(&mut rng).round();
    let noise = Normal::new(0.0, config.hr_noise_std).expect("finite std");
    let start_prob = config.desat_rate_per_hour / 3600.0;

    let mut hr = Vec::with_capacity(n);
    let mut spo2 = Vec::with_capacity(n);
    let mut in_desaturation = vec![false; n];
    let mut events = 0;
    let mut awakenings = 0;
    // Active event: (start second, decay length, recovery length, depth).
    let mut event: Option<(usize, usize, usize, f64)> = None;

    for t in 0..n {
        let w = t / WINDOW_SECONDS;
        if event.is_none() && stages[w] == Stage::Sleep && rng.random_bool(start_prob.min(1.0)) {
            let decay = rng.random_range(config.desat_decay_min_s..=config.desat_decay_max_s);
            let recovery = rng.random_range(config.desat_recovery_min_s..=config.desat_recovery_max_s);
            let depth = rng.random_range(config.desat_depth_min..=config.desat_depth_max);
            let end = t + decay + recovery;
            let fits = end <= n && (w..=(end - 1) / WINDOW_SECONDS).all(|k| stages[k] == Stage::Sleep);
            if fits {
                event = Some((t, decay, recovery, depth));
                events += 1;
            }
        }

        let mut drop = 0.0;
        if let Some((start, decay, recovery, depth)) = event {
            let k = t - start;
            drop = if k < decay {
                depth * (k + 1) as f64 / decay as f64
            } else {
                depth * (1.0 - (k - decay + 1) as f64 / recovery as f64)
            };
            in_desaturation[t] = true;
            if k + 1 == decay + recovery {
                event = None;
                let next = w + 1;
                if next < windows && stages[next] == Stage::Sleep && rng.random_bool(config.awakening_probability) {
                    stages[next] = Stage::Wake;
                    awakenings += 1;
                }
            }
        }

        let level = match stages[w] {
            Stage::Wake => hr_baseline,
            Stage::Sleep => hr_baseline - config.hr_sleep_drop,
        };
        hr.push(level + quantize(noise.sample(&mut rng), config.hr_quantum));
        spo2.push(quantize(config.spo2_baseline - drop, config.spo2_quantum).clamp(SPO2_FLOOR, 100.0));
    }

    let mut quality = vec![true; n];
    let dropout_prob = (config.dropout_rate_per_hour / 3600.0).min(1.0);
    let mut t = 0;
    while t < n {
        if rng.random_bool(dropout_prob) {
            let len = rng.random_range(config.dropout_min_s..=config.dropout_max_s);
            for i in t..(t + len).min(n) {
                quality[i] = false;
                hr[i] = quantize(rng.random_range(40.0..180.0), config.hr_quantum);
                spo2[i] = rng.random_range(SPO2_FLOOR..=100.0f64).round();
            }
            t += len;
        } else {
            t += 1;
        }
    }
    // Keep at least one good sample.
    if quality.iter().all(|&q| !q) {
        quality[0] = true;
    }

    let record = OximetryRecord {
        patient_id: patient_id(index),
        hr,
        spo2,
        quality,
        stages_30s: stages,
    };
    record.validate()?;
    Ok(SyntheticPatient {
        record,
        hr_baseline,
        in_desaturation,
        desaturation_events: events,
        awakenings,
    })
}

/// Fraction of sleep windows over all records.
pub fn sleep_fraction(records: &[OximetryRecord]) -> f64 {
    let total: usize = records.iter().map(OximetryRecord::window_count).sum();
    let sleep: usize = records
        .iter()
        .flat_map(|r| &r.stages_30s)
        .filter(|&&s| s == Stage::Sleep)
        .count();
    if total == 0 {
        0.0
    } else {
        sleep as f64 / total as f64
    }
}

/// Relative path of a generated record inside a dataset directory.
pub fn record_relative_path(patient_id: &str) -> String {
    format!("records/{patient_id}.csv")
}

/// Random train/validation/test assignment with the given fractions.
/// Counts are `round(n·f_train)` and `round(n·f_validation)`, the rest test.
pub fn generate_manifest(records: &[OximetryRecord], split_fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    let sum: f64 = split_fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || split_fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::Config(format!(
            "split fractions {split_fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = records.len();
    let n_train = (n as f64 * split_fractions[0]).round() as usize;
    let n_val = ((n as f64 * split_fractions[1]).round() as usize).min(n - n_train.min(n));
    let mut idx: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut assignment = vec![Split::Test; n];
    for (rank, &i) in idx.iter().enumerate() {
        assignment[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    let mut manifest = DatasetManifest::new(".");
    for (r, split) in records.iter().zip(assignment) {
        manifest
            .records
            .insert(r.patient_id.clone(), record_relative_path(&r.patient_id));
        manifest.splits.insert(r.patient_id.clone(), split);
    }
    Ok(manifest)
}
