//! Calls-for-service ingestion: CSV parsing, validation, de-duplication and
//! coordinate resolution.
//!
//! Data rows never abort a parse. A row that fails validation is dropped and
//! counted in [`IngestStats`], so that
//! `rows_read == rows_kept + dropped_*` holds after every stage.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Timestamp layout used by the canonical (cleaned) dataset schema.
pub const CANONICAL_TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
pub const CANONICAL_DATE_FORMAT: &str = "%Y-%m-%d";

/// Column order of the canonical cleaned-dataset CSV.
pub const CANONICAL_COLUMNS: [&str; 10] = [
    "call_id",
    "call_number",
    "offense_timestamp",
    "report_date",
    "priority",
    "call_type",
    "call_type_desc",
    "address",
    "latitude",
    "longitude",
];

/// One dispatch call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCallRecord {
    pub call_id: String,
    pub call_number: String,
    /// Local wall-clock time; no time-zone conversion is applied.
    pub offense_timestamp: NaiveDateTime,
    pub report_date: NaiveDate,
    /// Dispatcher priority, 1 (life-threatening) through 6.
    pub priority: u8,
    pub call_type: String,
    pub call_type_desc: String,
    pub address: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
}

impl RawCallRecord {
    pub fn coordinates(&self) -> Option<(f64, f64)> {
        self.latitude.zip(self.longitude)
    }
}

/// Axis-aligned latitude/longitude box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    /// San Jose city limits with margin.
    pub const SAN_JOSE: BoundingBox = BoundingBox {
        min_lat: 37.10,
        max_lat: 37.50,
        min_lon: -122.05,
        max_lon: -121.60,
    };

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

impl Default for BoundingBox {
    fn default() -> Self {
        Self::SAN_JOSE
    }
}

/// Row accounting for one ingest run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub dropped_duplicate: u64,
    pub dropped_null: u64,
    pub dropped_bad_priority: u64,
    pub dropped_out_of_bounds: u64,
    /// Rows whose fields were present but unparseable (bad timestamp, date,
    /// coordinate text, or a CSV row with the wrong field count).
    pub dropped_malformed: u64,
}

impl IngestStats {
    pub fn total_dropped(&self) -> u64 {
        self.dropped_duplicate
            + self.dropped_null
            + self.dropped_bad_priority
            + self.dropped_out_of_bounds
            + self.dropped_malformed
    }

    /// `rows_read == rows_kept + Σ dropped`.
    pub fn is_balanced(&self) -> bool {
        self.rows_read == self.rows_kept + self.total_dropped()
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.rows_read += other.rows_read;
        self.rows_kept += other.rows_kept;
        self.dropped_duplicate += other.dropped_duplicate;
        self.dropped_null += other.dropped_null;
        self.dropped_bad_priority += other.dropped_bad_priority;
        self.dropped_out_of_bounds += other.dropped_out_of_bounds;
        self.dropped_malformed += other.dropped_malformed;
    }

    pub fn record_duplicates(&mut self, removed: usize) {
        self.rows_kept -= removed as u64;
        self.dropped_duplicate += removed as u64;
    }

    pub fn record_out_of_bounds(&mut self, removed: usize) {
        self.rows_kept -= removed as u64;
        self.dropped_out_of_bounds += removed as u64;
    }
}

/// Source column for every [`RawCallRecord`] field.
///
/// The default matches the San Jose open-data calls-for-service export, which
/// splits the offense date and time into two columns and carries no
/// coordinates. [`ColumnMap::canonical`] reads files written by this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub call_id: String,
    pub call_number: String,
    pub offense_timestamp: String,
    /// When set, the first whitespace-separated token of `offense_timestamp`
    /// is joined with this column's value before parsing.
    pub offense_time: Option<String>,
    pub report_date: String,
    pub priority: String,
    pub call_type: String,
    pub call_type_desc: String,
    pub address: String,
    pub latitude: Option<String>,
    pub longitude: Option<String>,
    pub timestamp_format: String,
    pub date_format: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::san_jose()
    }
}

impl ColumnMap {
    pub fn san_jose() -> Self {
        ColumnMap {
            call_id: "EID".into(),
            call_number: "CALL_NUMBER".into(),
            offense_timestamp: "OFFENSE_DATE".into(),
            offense_time: Some("OFFENSE_TIME".into()),
            report_date: "REPORT_DATE".into(),
            priority: "PRIORITY".into(),
            call_type: "CALLTYPE_CODE".into(),
            call_type_desc: "CALL_TYPE".into(),
            address: "ADDRESS".into(),
            latitude: None,
            longitude: None,
            timestamp_format: CANONICAL_TIMESTAMP_FORMAT.into(),
            date_format: CANONICAL_DATE_FORMAT.into(),
        }
    }

    pub fn canonical() -> Self {
        ColumnMap {
            call_id: "call_id".into(),
            call_number: "call_number".into(),
            offense_timestamp: "offense_timestamp".into(),
            offense_time: None,
            report_date: "report_date".into(),
            priority: "priority".into(),
            call_type: "call_type".into(),
            call_type_desc: "call_type_desc".into(),
            address: "address".into(),
            latitude: Some("latitude".into()),
            longitude: Some("longitude".into()),
            timestamp_format: CANONICAL_TIMESTAMP_FORMAT.into(),
            date_format: CANONICAL_DATE_FORMAT.into(),
        }
    }
}

struct ColumnIndex {
    call_id: usize,
    call_number: usize,
    offense_timestamp: usize,
    offense_time: Option<usize>,
    report_date: usize,
    priority: usize,
    call_type: usize,
    call_type_desc: usize,
    address: usize,
    latitude: Option<usize>,
    longitude: Option<usize>,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, map: &ColumnMap) -> Result<Self> {
        let find = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
                .ok_or_else(|| Error::Config(format!("mapped column `{name}` not found in CSV header")))
        };
        let optional = |name: &Option<String>| name.as_deref().map(find).transpose();
        if map.latitude.is_some() != map.longitude.is_some() {
            return Err(Error::Config(
                "latitude and longitude columns must be mapped together".into(),
            ));
        }
        Ok(ColumnIndex {
            call_id: find(&map.call_id)?,
            call_number: find(&map.call_number)?,
            offense_timestamp: find(&map.offense_timestamp)?,
            offense_time: optional(&map.offense_time)?,
            report_date: find(&map.report_date)?,
            priority: find(&map.priority)?,
            call_type: find(&map.call_type)?,
            call_type_desc: find(&map.call_type_desc)?,
            address: find(&map.address)?,
            latitude: optional(&map.latitude)?,
            longitude: optional(&map.longitude)?,
        })
    }
}

enum RowOutcome {
    Kept(RawCallRecord),
    Null,
    BadPriority,
    Malformed,
}

fn field(row: &csv::StringRecord, idx: usize) -> &str {
    row.get(idx).unwrap_or("").trim()
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnIndex, map: &ColumnMap) -> RowOutcome {
    let call_id = field(row, cols.call_id);
    let ts_text = field(row, cols.offense_timestamp);
    let time_text = cols.offense_time.map(|i| field(row, i));
    let report_text = field(row, cols.report_date);
    let priority_text = field(row, cols.priority);
    let call_type = field(row, cols.call_type);

    if call_id.is_empty()
        || ts_text.is_empty()
        || time_text.is_some_and(str::is_empty)
        || report_text.is_empty()
        || priority_text.is_empty()
        || call_type.is_empty()
    {
        return RowOutcome::Null;
    }

    let priority = match priority_text.parse::<u8>() {
        Ok(p) if (1..=6).contains(&p) => p,
        _ => return RowOutcome::BadPriority,
    };

    let ts_joined;
    let ts_source = match time_text {
        Some(time) => {
            let date = ts_text.split_whitespace().next().unwrap_or(ts_text);
            ts_joined = format!("{date} {time}");
            ts_joined.as_str()
        }
        None => ts_text,
    };
    let Ok(offense_timestamp) = NaiveDateTime::parse_from_str(ts_source, &map.timestamp_format) else {
        return RowOutcome::Malformed;
    };
    let report_token = report_text.split_whitespace().next().unwrap_or(report_text);
    let Ok(report_date) = NaiveDate::parse_from_str(report_token, &map.date_format) else {
        return RowOutcome::Malformed;
    };

    let (latitude, longitude) = match (cols.latitude, cols.longitude) {
        (Some(li), Some(gi)) => {
            let (lat, lon) = (field(row, li), field(row, gi));
            if lat.is_empty() || lon.is_empty() {
                (None, None)
            } else {
                match (lat.parse::<f64>(), lon.parse::<f64>()) {
                    (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (Some(a), Some(b)),
                    _ => return RowOutcome::Malformed,
                }
            }
        }
        _ => (None, None),
    };

    RowOutcome::Kept(RawCallRecord {
        call_id: call_id.to_string(),
        call_number: field(row, cols.call_number).to_string(),
        offense_timestamp,
        report_date,
        priority,
        call_type: call_type.to_string(),
        call_type_desc: field(row, cols.call_type_desc).to_string(),
        address: field(row, cols.address).to_string(),
        latitude,
        longitude,
    })
}

/// Parses one CSV export. Header problems are fatal; data-row problems are
/// counted and the row dropped.
pub fn parse_call_records<R: Read>(csv_source: R, column_map: &ColumnMap) -> Result<(Vec<RawCallRecord>, IngestStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_source);
    let header = reader
        .headers()
        .map_err(|e| Error::Config(format!("unreadable CSV header: {e}")))?
        .clone();
    if header.is_empty() {
        return Err(Error::Config("CSV header row is empty".into()));
    }
    let cols = ColumnIndex::resolve(&header, column_map)?;

    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                stats.rows_read += 1;
                if row.len() != header.len() {
                    stats.dropped_malformed += 1;
                    continue;
                }
                match parse_row(&row, &cols, column_map) {
                    RowOutcome::Kept(r) => records.push(r),
                    RowOutcome::Null => stats.dropped_null += 1,
                    RowOutcome::BadPriority => stats.dropped_bad_priority += 1,
                    RowOutcome::Malformed => stats.dropped_malformed += 1,
                }
            }
            // Invalid UTF-8 and similar per-row failures.
            Err(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => {
                stats.rows_read += 1;
                stats.dropped_malformed += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    stats.rows_kept = records.len() as u64;
    Ok((records, stats))
}

/// Parses several files concurrently and concatenates them in listing order.
pub fn parse_files<P: AsRef<Path> + Sync>(
    paths: &[P],
    column_map: &ColumnMap,
) -> Result<(Vec<RawCallRecord>, IngestStats)> {
    let parts = paths
        .par_iter()
        .map(|p| {
            let file = std::fs::File::open(p.as_ref())?;
            parse_call_records(std::io::BufReader::new(file), column_map)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut stats = IngestStats::default();
    for (part, part_stats) in parts {
        records.extend(part);
        stats.merge(&part_stats);
    }
    Ok((records, stats))
}

/// Keeps the first occurrence of each `call_id`, preserving input order.
pub fn deduplicate(records: Vec<RawCallRecord>) -> (Vec<RawCallRecord>, usize) {
    let before = records.len();
    let mut seen = HashSet::with_capacity(before);
    let kept: Vec<_> = records.into_iter().filter(|r| seen.insert(r.call_id.clone())).collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Address to coordinate lookup.
pub trait Geocoder: Sync {
    /// `None` means the address could not be resolved.
    fn resolve(&self, address: &str) -> Option<(f64, f64)>;
}

/// Resolves nothing: records must already carry coordinates.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassthroughGeocoder;

impl Geocoder for PassthroughGeocoder {
    fn resolve(&self, _address: &str) -> Option<(f64, f64)> {
        None
    }
}

/// Deterministic stand-in for a geocoding service: a SHA-256 of the address
/// text picks a point inside `bounds`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockGeocoder {
    pub bounds: BoundingBox,
}

impl Geocoder for MockGeocoder {
    fn resolve(&self, address: &str) -> Option<(f64, f64)> {
        if address.trim().is_empty() {
            return None;
        }
        let digest = Sha256::digest(address.as_bytes());
        let unit = |bytes: &[u8]| {
            let v = u64::from_le_bytes(bytes.try_into().expect("8 bytes"));
            (v >> 11) as f64 / (1u64 << 53) as f64
        };
        let (u, v) = (unit(&digest[0..8]), unit(&digest[8..16]));
        let b = &self.bounds;
        // Stay off the box edge.
        let lat = b.min_lat + (b.max_lat - b.min_lat) * (0.05 + 0.9 * u);
        let lon = b.min_lon + (b.max_lon - b.min_lon) * (0.05 + 0.9 * v);
        Some((lat, lon))
    }
}

/// Counters from [`resolve_coordinates`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveStats {
    pub geocoded: u64,
    pub dropped_out_of_bounds: u64,
}

/// Fills missing coordinates through `geocoder`, then drops every record that
/// is still unresolved or lies outside `bounds`.
pub fn resolve_coordinates(
    records: Vec<RawCallRecord>,
    geocoder: &dyn Geocoder,
    bounds: &BoundingBox,
) -> (Vec<RawCallRecord>, ResolveStats) {
    let mut stats = ResolveStats::default();
    let mut kept = Vec::with_capacity(records.len());
    for mut r in records {
        if r.coordinates().is_none() {
            if let Some((lat, lon)) = geocoder.resolve(&r.address) {
                r.latitude = Some(lat);
                r.longitude = Some(lon);
                stats.geocoded += 1;
            }
        }
        match r.coordinates() {
            Some((lat, lon)) if bounds.contains(lat, lon) => kept.push(r),
            _ => stats.dropped_out_of_bounds += 1,
        }
    }
    (kept, stats)
}

/// Full cleaning pass: parse, deduplicate, resolve coordinates.
pub fn clean_files<P: AsRef<Path> + Sync>(
    paths: &[P],
    column_map: &ColumnMap,
    geocoder: &dyn Geocoder,
    bounds: &BoundingBox,
) -> Result<(Vec<RawCallRecord>, IngestStats)> {
    let (records, mut stats) = parse_files(paths, column_map)?;
    let (records, removed) = deduplicate(records);
    stats.record_duplicates(removed);
    let (records, resolved) = resolve_coordinates(records, geocoder, bounds);
    stats.record_out_of_bounds(resolved.dropped_out_of_bounds as usize);
    debug_assert!(stats.is_balanced());
    Ok((records, stats))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the canonical schema ([`CANONICAL_COLUMNS`]).
pub fn write_records_csv<W: Write>(records: &[RawCallRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CANONICAL_COLUMNS)?;
    for r in records {
        w.write_record([
            r.call_id.as_str(),
            r.call_number.as_str(),
            &r.offense_timestamp.format(CANONICAL_TIMESTAMP_FORMAT).to_string(),
            &r.report_date.format(CANONICAL_DATE_FORMAT).to_string(),
            &r.priority.to_string(),
            r.call_type.as_str(),
            r.call_type_desc.as_str(),
            r.address.as_str(),
            &fmt_opt(r.latitude),
            &fmt_opt(r.longitude),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_records_jsonl<W: Write>(records: &[RawCallRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<RawCallRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Reads a cleaned dataset written by [`write_records_csv`].
pub fn read_canonical_csv<P: AsRef<Path>>(path: P) -> Result<Vec<RawCallRecord>> {
    let file = std::fs::File::open(path.as_ref())?;
    let (records, stats) = parse_call_records(std::io::BufReader::new(file), &ColumnMap::canonical())?;
    if stats.rows_kept != stats.rows_read {
        log::warn!(
            "{}: {} of {} rows failed validation",
            path.as_ref().display(),
            stats.total_dropped(),
            stats.rows_read
        );
    }
    Ok(records)
}
