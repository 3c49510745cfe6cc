//! Feature engineering: temporal encodings, call-type vocabulary, coordinate
//! grids, the binary danger label, splitting, scaling and class weights.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawCallRecord;
use crate::seed;

pub const OFFENSE_WEEKDAY: &str = "OFFENSE_WEEKDAY";
pub const TIMECHUNK_NUM: &str = "TIMECHUNK_NUM";
pub const CALLTYPE_NUM: &str = "CALLTYPE_NUM";
pub const PRIORITY: &str = "PRIORITY";
pub const DANGEROUS_SITUATION: &str = "DANGEROUS_SITUATION";

/// Which location columns (if any) accompany the three citywide features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Weekday, time chunk and call type only.
    Citywide,
    /// Coordinates rounded to 0.1 degree.
    Grid1,
    /// Coordinates rounded to 0.01 degree.
    Grid2,
    /// Raw geocoded coordinates.
    Exact,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::Citywide,
        FeatureSet::Grid1,
        FeatureSet::Grid2,
        FeatureSet::Exact,
    ];

    pub fn feature_names(self) -> Vec<&'static str> {
        let mut names = vec![OFFENSE_WEEKDAY, TIMECHUNK_NUM, CALLTYPE_NUM];
        match self {
            FeatureSet::Citywide => {}
            FeatureSet::Grid1 => names.extend(["LAT_ROUND1", "LONG_ROUND1"]),
            FeatureSet::Grid2 => names.extend(["LAT_ROUND2", "LONG_ROUND2"]),
            FeatureSet::Exact => names.extend(["LATITUDE", "LONGITUDE"]),
        }
        names
    }

    /// Recovers the tag from a column list.
    pub fn from_feature_names<S: AsRef<str>>(names: &[S]) -> Option<FeatureSet> {
        FeatureSet::ALL.into_iter().find(|fs| {
            let expected = fs.feature_names();
            expected.len() == names.len() && expected.iter().zip(names).all(|(a, b)| *a == b.as_ref())
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Citywide => "citywide",
            FeatureSet::Grid1 => "grid1",
            FeatureSet::Grid2 => "grid2",
            FeatureSet::Exact => "exact",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureSet::ALL
            .into_iter()
            .find(|fs| fs.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature set `{s}` (citywide|grid1|grid2|exact)")))
    }
}

/// Monday = 0 weekday and the 30-minute window index (0..=47).
pub fn extract_temporal(ts: &NaiveDateTime) -> (u32, u32) {
    let weekday = ts.weekday().num_days_from_monday();
    let chunk = (ts.hour() * 60 + ts.minute()) / 30;
    (weekday, chunk)
}

/// Call-type code to integer mapping. Id 0 is reserved for unseen codes;
/// known codes get 1..=K by descending training frequency, ties broken
/// lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    codes: BTreeMap<String, u32>,
}

impl Vocabulary {
    pub const UNKNOWN: u32 = 0;

    pub fn build<'a, I>(codes: I) -> Vocabulary
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for c in codes {
            *counts.entry(c).or_default() += 1;
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocabulary {
            codes: ranked
                .into_iter()
                .enumerate()
                .map(|(i, (code, _))| (code.to_string(), i as u32 + 1))
                .collect(),
        }
    }

    pub fn from_records(records: &[RawCallRecord]) -> Vocabulary {
        Self::build(records.iter().map(|r| r.call_type.as_str()))
    }

    pub fn encode(&self, code: &str) -> u32 {
        self.codes.get(code).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.codes.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub fn round_half_even(value: f64, places: u32) -> f64 {
    let scale = 10f64.powi(places as i32);
    (value * scale).round_ties_even() / scale
}

/// Rounds a coordinate pair onto a decimal-degree grid.
pub fn round_coordinates(lat: f64, lon: f64, places: u32) -> (f64, f64) {
    (round_half_even(lat, places), round_half_even(lon, places))
}

/// 1 for priorities 1 and 2, 0 for 3 through 6.
///
/// # Panics
/// On priorities outside 1..=6; ingest filters those out.
pub fn map_dangerous(priority: u8) -> u8 {
    assert!((1..=6).contains(&priority), "priority {priority} outside 1..=6");
    u8::from(priority <= 2)
}

/// Engineered per-record values, before column selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub offense_weekday: u32,
    pub time_chunk: u32,
    pub call_type_num: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub lat_round1: f64,
    pub long_round1: f64,
    pub lat_round2: f64,
    pub long_round2: f64,
    pub priority: u8,
    pub dangerous: u8,
}

impl FeatureRow {
    /// Coordinates default to NaN when the record has none; callers asking
    /// for a spatial feature set must reject such rows.
    pub fn from_record(record: &RawCallRecord, vocab: &Vocabulary) -> FeatureRow {
        let (weekday, chunk) = extract_temporal(&record.offense_timestamp);
        let (lat, lon) = record.coordinates().unwrap_or((f64::NAN, f64::NAN));
        let (lat1, lon1) = round_coordinates(lat, lon, 1);
        let (lat2, lon2) = round_coordinates(lat, lon, 2);
        FeatureRow {
            offense_weekday: weekday,
            time_chunk: chunk,
            call_type_num: vocab.encode(&record.call_type),
            latitude: lat,
            longitude: lon,
            lat_round1: lat1,
            long_round1: lon1,
            lat_round2: lat2,
            long_round2: lon2,
            priority: record.priority,
            dangerous: map_dangerous(record.priority),
        }
    }

    fn values(&self, fs: FeatureSet) -> Vec<f64> {
        let mut v = vec![
            f64::from(self.offense_weekday),
            f64::from(self.time_chunk),
            f64::from(self.call_type_num),
        ];
        match fs {
            FeatureSet::Citywide => {}
            FeatureSet::Grid1 => v.extend([self.lat_round1, self.long_round1]),
            FeatureSet::Grid2 => v.extend([self.lat_round2, self.long_round2]),
            FeatureSet::Exact => v.extend([self.latitude, self.longitude]),
        }
        v
    }
}

/// Which label vector a learner trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// DANGEROUS_SITUATION (0/1).
    Binary,
    /// PRIORITY (1..=6).
    Multiclass,
    /// PRIORITY treated as a real number.
    Regression,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
            Task::Regression => "regression",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            "regression" => Ok(Task::Regression),
            _ => Err(Error::Config(format!(
                "unknown task `{s}` (binary|multiclass|regression)"
            ))),
        }
    }
}

/// Immutable feature matrix with both label vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    x: Array2<f64>,
    feature_names: Vec<String>,
    priority: Vec<u32>,
    danger: Vec<u32>,
    feature_set: FeatureSet,
}

impl FeatureTable {
    pub fn new(x: Array2<f64>, priority: Vec<u32>, danger: Vec<u32>, feature_set: FeatureSet) -> Result<FeatureTable> {
        let names: Vec<String> = feature_set.feature_names().into_iter().map(String::from).collect();
        if x.ncols() != names.len() || x.nrows() != priority.len() || x.nrows() != danger.len() {
            return Err(Error::InvalidInput(format!(
                "feature table shape {:?} does not match {} labels / {} columns",
                x.dim(),
                priority.len(),
                names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature table contains non-finite values".into()));
        }
        Ok(FeatureTable {
            x,
            feature_names: names,
            priority,
            danger,
            feature_set,
        })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn priority_labels(&self) -> &[u32] {
        &self.priority
    }

    pub fn danger_labels(&self) -> &[u32] {
        &self.danger
    }

    pub fn labels(&self, task: Task) -> &[u32] {
        match task {
            Task::Binary => &self.danger,
            Task::Multiclass | Task::Regression => &self.priority,
        }
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.feature_set
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// New table holding `indices` in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            x: self.x.select(Axis(0), indices),
            feature_names: self.feature_names.clone(),
            priority: indices.iter().map(|&i| self.priority[i]).collect(),
            danger: indices.iter().map(|&i| self.danger[i]).collect(),
            feature_set: self.feature_set,
        }
    }

    /// CSV with header `feature_names + PRIORITY + DANGEROUS_SITUATION`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend([PRIORITY, DANGEROUS_SITUATION]);
        w.write_record(&header)?;
        let mut fields = Vec::with_capacity(header.len());
        for (i, row) in self.x.rows().into_iter().enumerate() {
            fields.clear();
            fields.extend(row.iter().map(|v| v.to_string()));
            fields.push(self.priority[i].to_string());
            fields.push(self.danger[i].to_string());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let n = header.len();
        if n < 2 || header[n - 2] != PRIORITY || header[n - 1] != DANGEROUS_SITUATION {
            return Err(Error::InvalidInput(format!(
                "feature table header must end with {PRIORITY},{DANGEROUS_SITUATION}"
            )));
        }
        let feature_set = FeatureSet::from_feature_names(&header[..n - 2])
            .ok_or_else(|| Error::InvalidInput(format!("unrecognised feature columns {:?}", &header[..n - 2])))?;
        let d = n - 2;
        let (mut data, mut priority, mut danger) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                rec.get(j).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| {
                    Error::InvalidInput(format!("row {}: column {} is not numeric", line + 1, header[j]))
                })
            };
            for j in 0..d {
                data.push(parse(j)?);
            }
            priority.push(parse(d)? as u32);
            danger.push(parse(d + 1)? as u32);
        }
        let x = Array2::from_shape_vec((priority.len(), d), data).expect("row-major shape");
        FeatureTable::new(x, priority, danger, feature_set)
    }
}

/// One row per record in record order.
pub fn assemble_features(
    records: &[RawCallRecord],
    vocab: &Vocabulary,
    feature_set: FeatureSet,
) -> Result<FeatureTable> {
    let d = feature_set.feature_names().len();
    let mut data = Vec::with_capacity(records.len() * d);
    let mut priority = Vec::with_capacity(records.len());
    let mut danger = Vec::with_capacity(records.len());
    for r in records {
        if feature_set != FeatureSet::Citywide && r.coordinates().is_none() {
            return Err(Error::InvalidInput(format!(
                "record {} has no coordinates but feature set `{feature_set}` needs them",
                r.call_id
            )));
        }
        let row = FeatureRow::from_record(r, vocab);
        data.extend(row.values(feature_set));
        priority.push(u32::from(row.priority));
        danger.push(u32::from(row.dangerous));
    }
    let x = Array2::from_shape_vec((records.len(), d), data).expect("row-major shape");
    FeatureTable::new(x, priority, danger, feature_set)
}

/// Train/test index partition: a seeded Fisher-Yates shuffle of `0..n`
/// whose last `ceil(n * test_fraction)` entries form the test set.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    validate_split(n, test_fraction)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_test = test_count(n, test_fraction);
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// Like [`split_indices`] but each label keeps its share in both parts.
pub fn stratified_split_indices(labels: &[u32], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    validate_split(labels.len(), test_fraction)?;
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let k = ((members.len() as f64) * test_fraction).round() as usize;
        let tail = members.split_off(members.len() - k.min(members.len()));
        train.extend(members);
        test.extend(tail);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

fn validate_split(n: usize, test_fraction: f64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("cannot split {n} rows")));
    }
    Ok(())
}

fn test_count(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction).ceil() as usize).clamp(1, n - 1)
}

pub fn split_train_test(table: &FeatureTable, test_fraction: f64, seed: u64) -> Result<(FeatureTable, FeatureTable)> {
    let (train, test) = split_indices(table.n_rows(), test_fraction, seed)?;
    Ok((table.select_rows(&train), table.select_rows(&test)))
}

/// Per-feature standardisation fitted on training rows (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Scaler> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("cannot fit a scaler on zero rows".into()));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let rough = col.sum() / n as f64;
            // Second pass removes the rounding left in the first mean.
            let m = rough + col.iter().map(|v| v - rough).sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(Scaler { mean, std })
    }

    /// Pass-through scaler for `d` features.
    pub fn identity(d: usize) -> Scaler {
        Scaler {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std`; zero-variance features map to 0.
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            if s > 0.0 {
                col.mapv_inplace(|v| (v - m) / s);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Balanced per-class weights `n / (k * n_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: BTreeMap<u32, f64>,
}

impl ClassWeights {
    pub fn balanced(labels: &[u32]) -> Result<ClassWeights> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("class weights need at least one label".into()));
        }
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &y in labels {
            *counts.entry(y).or_default() += 1;
        }
        let n = labels.len() as f64;
        let k = counts.len() as f64;
        Ok(ClassWeights {
            weights: counts.into_iter().map(|(c, nc)| (c, n / (k * nc as f64))).collect(),
        })
    }

    pub fn from_map(weights: BTreeMap<u32, f64>) -> ClassWeights {
        ClassWeights { weights }
    }

    /// Weight of `label`; labels not seen at fit time weigh 1.
    pub fn weight(&self, label: u32) -> f64 {
        self.weights.get(&label).copied().unwrap_or(1.0)
    }

    pub fn sample_weights(&self, labels: &[u32]) -> Vec<f64> {
        labels.iter().map(|&y| self.weight(y)).collect()
    }

    pub fn as_map(&self) -> &BTreeMap<u32, f64> {
        &self.weights
    }
}

/// Free-function form of [`ClassWeights::balanced`].
pub fn compute_class_weights(labels: &[u32]) -> Result<ClassWeights> {
    ClassWeights::balanced(labels)
}
