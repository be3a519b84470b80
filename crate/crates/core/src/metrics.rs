//! Window-level agreement metrics with wake as the positive class, and the
//! total-sleep-time errors E₁ (minutes) and E₂ (percent).
//!
//! Metrics are computed per patient and then averaged over patients. A ratio
//! whose denominator is zero is reported as absent and left out of that
//! column's average; the report records how many patients were left out.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::signal_io::Stage;
use crate::staging::Hypnogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_labels(reference: &[Stage], predicted: &[Stage]) -> Result<Self> {
        if reference.len() != predicted.len() {
            return Err(Error::Invalid(format!(
                "hypnogram lengths differ: reference {}, predicted {}",
                reference.len(),
                predicted.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&r, &p) in reference.iter().zip(predicted) {
            match (r, p) {
                (Stage::Wake, Stage::Wake) => c.tp += 1,
                (Stage::Sleep, Stage::Wake) => c.fp += 1,
                (Stage::Sleep, Stage::Sleep) => c.tn += 1,
                (Stage::Wake, Stage::Sleep) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

pub fn confusion(reference: &Hypnogram, predicted: &Hypnogram) -> Result<ConfusionCounts> {
    if reference.patient_id != predicted.patient_id {
        return Err(Error::Invalid(format!(
            "comparing hypnograms of different patients: `{}` vs `{}`",
            reference.patient_id, predicted.patient_id
        )));
    }
    ConfusionCounts::from_labels(&reference.labels, &predicted.labels)
}

/// Rates as fractions in [0, 1]; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClinicalMetrics {
    pub acc: f64,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub prec: Option<f64>,
    pub npv: Option<f64>,
    /// Cohen's κ; absent when chance agreement is 1.
    pub kappa: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn clinical_metrics(c: &ConfusionCounts) -> Result<ClinicalMetrics> {
    let n = c.total();
    if n == 0 {
        return Err(Error::Invalid("no windows to score".into()));
    }
    let nf = n as f64;
    let p_o = (c.tp + c.tn) as f64 / nf;
    let pred_w = (c.tp + c.fp) as f64;
    let ref_w = (c.tp + c.fn_) as f64;
    let pred_s = (c.tn + c.fn_) as f64;
    let ref_s = (c.tn + c.fp) as f64;
    let p_e = (pred_w * ref_w + pred_s * ref_s) / (nf * nf);
    let kappa = (p_e < 1.0).then(|| (p_o - p_e) / (1.0 - p_e));
    Ok(ClinicalMetrics {
        acc: p_o,
        se: ratio(c.tp, c.tp + c.fn_),
        sp: ratio(c.tn, c.tn + c.fp),
        prec: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
        kappa,
    })
}

/// Reference and estimated total sleep time for one patient, in minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct TstPair {
    pub patient_id: String,
    pub tst: f64,
    pub tst_hat: f64,
}

impl TstPair {
    pub fn from_hypnograms(reference: &Hypnogram, predicted: &Hypnogram) -> Self {
        Self {
            patient_id: reference.patient_id.clone(),
            tst: reference.total_sleep_minutes(),
            tst_hat: predicted.total_sleep_minutes(),
        }
    }
}

/// `(E₁, E₂)`: mean absolute TST error in minutes and mean absolute error
/// relative to the reference TST, in percent.
pub fn tst_errors(pairs: &[TstPair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no patients for TST errors".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.tst <= 0.0) {
        return Err(Error::Invalid(format!(
            "patient `{}` has zero reference sleep time; E2 is undefined",
            p.patient_id
        )));
    }
    let n = pairs.len() as f64;
    let e1 = pairs.iter().map(|p| (p.tst - p.tst_hat).abs()).sum::<f64>() / n;
    let e2 = pairs.iter().map(|p| (p.tst - p.tst_hat).abs() / p.tst * 100.0).sum::<f64>() / n;
    Ok((e1, e2))
}

/// One patient's row. Rates are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub counts: ConfusionCounts,
    pub acc: f64,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub prec: Option<f64>,
    pub npv: Option<f64>,
    pub kappa: Option<f64>,
    pub e1_minutes: f64,
    pub e2_percent: Option<f64>,
    pub tst_minutes: f64,
    pub tst_hat_minutes: f64,
}

/// Mean of one column and the number of patients it excludes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnAverage {
    pub mean: Option<f64>,
    pub excluded: usize,
}

impl ColumnAverage {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut excluded = 0usize;
        for v in values {
            match v {
                Some(x) => {
                    sum += x;
                    n += 1;
                }
                None => excluded += 1,
            }
        }
        Self {
            mean: (n > 0).then(|| sum / n as f64),
            excluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Averages {
    pub acc: ColumnAverage,
    pub se: ColumnAverage,
    pub sp: ColumnAverage,
    pub prec: ColumnAverage,
    pub npv: ColumnAverage,
    pub kappa: ColumnAverage,
    pub e1_minutes: ColumnAverage,
    pub e2_percent: ColumnAverage,
    pub tst_minutes: ColumnAverage,
    pub tst_hat_minutes: ColumnAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<PatientMetrics>,
    pub averages: Averages,
}

pub fn patient_metrics(reference: &Hypnogram, predicted: &Hypnogram) -> Result<PatientMetrics> {
    let counts = confusion(reference, predicted)?;
    let m = clinical_metrics(&counts)?;
    let tst = TstPair::from_hypnograms(reference, predicted);
    let pct = |v: Option<f64>| v.map(|x| x * 100.0);
    let e1 = (tst.tst - tst.tst_hat).abs();
    Ok(PatientMetrics {
        patient_id: reference.patient_id.clone(),
        counts,
        acc: m.acc * 100.0,
        se: pct(m.se),
        sp: pct(m.sp),
        prec: pct(m.prec),
        npv: pct(m.npv),
        kappa: m.kappa,
        e1_minutes: e1,
        e2_percent: (tst.tst > 0.0).then(|| e1 / tst.tst * 100.0),
        tst_minutes: tst.tst,
        tst_hat_minutes: tst.tst_hat,
    })
}

/// Per-patient metrics for `(reference, predicted)` pairs and their averages.
pub fn build_report(pairs: &[(Hypnogram, Hypnogram)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no patients to report".into()));
    }
    let rows = pairs
        .iter()
        .map(|(r, p)| patient_metrics(r, p))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: &dyn Fn(&PatientMetrics) -> Option<f64>| ColumnAverage::of(rows.iter().map(f));
    let averages = Averages {
        acc: col(&|r| Some(r.acc)),
        se: col(&|r| r.se),
        sp: col(&|r| r.sp),
        prec: col(&|r| r.prec),
        npv: col(&|r| r.npv),
        kappa: col(&|r| r.kappa),
        e1_minutes: col(&|r| Some(r.e1_minutes)),
        e2_percent: col(&|r| r.e2_percent),
        tst_minutes: col(&|r| Some(r.tst_minutes)),
        tst_hat_minutes: col(&|r| Some(r.tst_hat_minutes)),
    };
    Ok(MetricsReport { rows, averages })
}

pub const REPORT_HEADER: &str = "patient_id,acc,se,sp,prec,npv,kappa,e1_min,e2_pct,tst_min,tst_hat_min";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// CSV with one row per patient, then `average` and `excluded` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.patient_id,
                r.acc,
                cell(r.se),
                cell(r.sp),
                cell(r.prec),
                cell(r.npv),
                cell(r.kappa),
                r.e1_minutes,
                cell(r.e2_percent),
                r.tst_minutes,
                r.tst_hat_minutes
            );
        }
        let a = &self.averages;
        let cols = [
            a.acc,
            a.se,
            a.sp,
            a.prec,
            a.npv,
            a.kappa,
            a.e1_minutes,
            a.e2_percent,
            a.tst_minutes,
            a.tst_hat_minutes,
        ];
        let means: Vec<String> = cols.iter().map(|c| cell(c.mean)).collect();
        let excluded: Vec<String> = cols.iter().map(|c| c.excluded.to_string()).collect();
        let _ = writeln!(out, "average,{}", means.join(","));
        let _ = writeln!(out, "excluded,{}", excluded.join(","));
        out
    }
}
