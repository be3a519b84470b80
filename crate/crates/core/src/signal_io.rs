//! Per-patient record files and the dataset manifest.
//!
//! A record is a CSV with header `t,hr,spo2,quality,stage`, one row per
//! second. The stage column repeats the 30-second window label for each of its
//! seconds. Rows that do not fill a final 30-second window are dropped on load.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::StandardizationStats;

/// Seconds per scoring window.
pub const WINDOW_SECONDS: usize = 30;

pub const HR_MAX_BPM: f64 = 300.0;
pub const SPO2_MAX_PERCENT: f64 = 100.0;

/// Two-class sleep stage. Class index 0 is wake, 1 is sleep; probability
/// vectors are always ordered (W, S).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "W")]
    Wake,
    #[serde(rename = "S")]
    Sleep,
}

impl Stage {
    pub const COUNT: usize = 2;

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Stage::Wake => 0,
            Stage::Sleep => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        match i {
            0 => Some(Stage::Wake),
            1 => Some(Stage::Sleep),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Stage::Wake => 'W',
            Stage::Sleep => 'S',
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "W" => Ok(Stage::Wake),
            "S" => Ok(Stage::Sleep),
            other => Err(format!("unknown stage label `{other}` (expected W or S)")),
        }
    }
}

/// One patient's raw 1 Hz oximetry with 30-second stage labels.
#[derive(Debug, Clone, PartialEq)]
pub struct OximetryRecord {
    pub patient_id: String,
    /// Heart rate, beats per minute.
    pub hr: Vec<f64>,
    /// Oxygen saturation, percent.
    pub spo2: Vec<f64>,
    /// `true` where the sensor reported a good connection.
    pub quality: Vec<bool>,
    pub stages_30s: Vec<Stage>,
}

impl OximetryRecord {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn window_count(&self) -> usize {
        self.stages_30s.len()
    }

    /// Checks every record invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidRecord {
            patient_id: self.patient_id.clone(),
            message,
        };
        let n = self.hr.len();
        if n == 0 {
            return Err(bad("record has no samples".into()));
        }
        if self.spo2.len() != n || self.quality.len() != n {
            return Err(bad(format!(
                "channel lengths differ: hr={}, spo2={}, quality={}",
                n,
                self.spo2.len(),
                self.quality.len()
            )));
        }
        if n % WINDOW_SECONDS != 0 || self.stages_30s.len() != n / WINDOW_SECONDS {
            return Err(bad(format!(
                "{} samples do not match {} stage windows of {WINDOW_SECONDS} s",
                n,
                self.stages_30s.len()
            )));
        }
        if let Some(i) = self.hr.iter().position(|&v| !hr_in_range(v)) {
            return Err(bad(format!("hr[{i}] = {} outside (0, {HR_MAX_BPM})", self.hr[i])));
        }
        if let Some(i) = self.spo2.iter().position(|&v| !spo2_in_range(v)) {
            return Err(bad(format!(
                "spo2[{i}] = {} outside [0, {SPO2_MAX_PERCENT}]",
                self.spo2[i]
            )));
        }
        Ok(())
    }

    /// Per-second labels: each window label repeated for its 30 seconds.
    pub fn per_second_stages(&self) -> Vec<Stage> {
        self.stages_30s
            .iter()
            .flat_map(|&s| std::iter::repeat_n(s, WINDOW_SECONDS))
            .collect()
    }
}

fn hr_in_range(v: f64) -> bool {
    v.is_finite() && v > 0.0 && v < HR_MAX_BPM
}

fn spo2_in_range(v: f64) -> bool {
    v.is_finite() && (0.0..=SPO2_MAX_PERCENT).contains(&v)
}

/// Patient id used for a record file: the file stem.
pub fn patient_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_record(path: &Path) -> Result<OximetryRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_record(&text, path, patient_id_from_path(path))
}

/// Parses record CSV text. `path` is only used in error messages.
pub fn parse_record(text: &str, path: &Path, patient_id: String) -> Result<OximetryRecord> {
    let load_err = |row: usize, field: &'static str, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        field,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| load_err(0, "header", e.to_string()))?
        .clone();
    let expected = ["t", "hr", "spo2", "quality", "stage"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(load_err(
            0,
            "header",
            format!("expected `t,hr,spo2,quality,stage`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut hr = Vec::new();
    let mut spo2 = Vec::new();
    let mut quality = Vec::new();
    let mut per_second = Vec::new();

    for (i, result) in reader.records().enumerate() {
        let row = i + 1;
        let rec = result.map_err(|e| load_err(row, "row", e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(load_err(row, "row", format!("expected 5 fields, found {}", rec.len())));
        }

        let t: u64 = rec[0]
            .parse()
            .map_err(|_| load_err(row, "t", format!("`{}` is not a whole second", &rec[0])))?;
        if t != i as u64 {
            return Err(load_err(row, "t", format!("expected t={i}, found {t}")));
        }

        let h: f64 = rec[1]
            .parse()
            .map_err(|_| load_err(row, "hr", format!("`{}` is not a number", &rec[1])))?;
        if !hr_in_range(h) {
            return Err(load_err(row, "hr", format!("{h} outside (0, {HR_MAX_BPM})")));
        }

        let s: f64 = rec[2]
            .parse()
            .map_err(|_| load_err(row, "spo2", format!("`{}` is not a number", &rec[2])))?;
        if !spo2_in_range(s) {
            return Err(load_err(row, "spo2", format!("{s} outside [0, {SPO2_MAX_PERCENT}]")));
        }

        let q = match &rec[3] {
            "1" => true,
            "0" => false,
            other => return Err(load_err(row, "quality", format!("`{other}` is not 0 or 1"))),
        };

        let stage: Stage = rec[4].parse().map_err(|m| load_err(row, "stage", m))?;
        if i % WINDOW_SECONDS != 0 {
            let window_label = per_second[i - i % WINDOW_SECONDS];
            if stage != window_label {
                return Err(load_err(
                    row,
                    "stage",
                    format!("label {stage} differs from its window's label {window_label}"),
                ));
            }
        }

        hr.push(h);
        spo2.push(s);
        quality.push(q);
        per_second.push(stage);
    }

    let windows = hr.len() / WINDOW_SECONDS;
    if windows == 0 {
        return Err(load_err(
            hr.len(),
            "row",
            format!("fewer than {WINDOW_SECONDS} rows; no complete stage window"),
        ));
    }
    let keep = windows * WINDOW_SECONDS;
    hr.truncate(keep);
    spo2.truncate(keep);
    quality.truncate(keep);
    let stages_30s = per_second[..keep].iter().step_by(WINDOW_SECONDS).copied().collect();

    let record = OximetryRecord {
        patient_id,
        hr,
        spo2,
        quality,
        stages_30s,
    };
    record.validate()?;
    Ok(record)
}

/// Renders a record in the CSV record format.
pub fn render_record(record: &OximetryRecord) -> Result<String> {
    record.validate()?;
    let mut out = String::with_capacity(record.len() * 16 + 32);
    out.push_str("t,hr,spo2,quality,stage\n");
    for i in 0..record.len() {
        use std::fmt::Write as _;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            i,
            record.hr[i],
            record.spo2[i],
            u8::from(record.quality[i]),
            record.stages_30s[i / WINDOW_SECONDS]
        );
    }
    Ok(out)
}

pub fn save_record(record: &OximetryRecord, path: &Path) -> Result<()> {
    let text = render_record(record)?;
    write_atomic(path, text.as_bytes())
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!(
                "unknown split `{other}` (expected train, validation or test)"
            ))),
        }
    }
}

/// JSON manifest: record paths (relative to the manifest's directory), split
/// assignments and, once fitted, the train-split standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: IndexMap<String, String>,
    pub splits: IndexMap<String, Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<StandardizationStats>,
    /// Directory that record paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            records: IndexMap::new(),
            splits: IndexMap::new(),
            standardization: None,
            root: root.into(),
        }
    }

    pub fn record_path(&self, id: &str) -> Option<PathBuf> {
        self.records.get(id).map(|rel| self.root.join(rel))
    }

    /// Ids assigned to `split`, in manifest order.
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.records
            .keys()
            .filter(|id| self.splits.get(id.as_str()) == Some(&split))
            .map(String::as_str)
            .collect()
    }

    /// Structural checks plus existence of every record file.
    pub fn validate(&self) -> Result<()> {
        for id in self.splits.keys() {
            if !self.records.contains_key(id) {
                return Err(Error::Manifest(format!("split entry `{id}` has no record path")));
            }
        }
        for id in self.records.keys() {
            let path = self.record_path(id).expect("id from records");
            if !path.is_file() {
                return Err(Error::Manifest(format!(
                    "record `{id}`: file {} does not exist",
                    path.display()
                )));
            }
        }
        if let Some(stats) = &self.standardization {
            stats.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    manifest.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_atomic(path, manifest.to_json().as_bytes())
}

/// Loads every record of `split`, in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<OximetryRecord>> {
    manifest
        .ids(split)
        .into_iter()
        .map(|id| {
            let path = manifest.record_path(id).expect("id from records");
            if !path.is_file() {
                return Err(Error::Manifest(format!(
                    "record `{id}`: file {} does not exist",
                    path.display()
                )));
            }
            let mut record = load_record(&path)?;
            record.patient_id = id.to_string();
            Ok(record)
        })
        .collect()
}

/// [`load_split`] with the split given by name.
pub fn load_split_named(manifest: &DatasetManifest, split: &str) -> Result<Vec<OximetryRecord>> {
    load_split(manifest, split.parse()?)
}
