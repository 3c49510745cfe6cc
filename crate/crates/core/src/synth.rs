//! Synthetic calls-for-service with a known danger probability per row.
//!
//! Each row picks a spatial cluster, a call type and a time of day. Its
//! danger probability is
//!
//! ```text
//! p = clamp(base_rate + boost * m(lat, lon) * f(call_type, time_chunk), 0, 1)
//! m = clamp(sum_c intensity_c * exp(-d_c^2 / (2 * kernel_std_c^2)), -1, 1)
//! f = clamp(offset + amplitude * cos(2π (chunk - peak_chunk) / 48), -1, 1)
//! ```
//!
//! and the dangerous label is a Bernoulli draw from `p`. A cluster with zero
//! weight contributes to `m` without drawing rows; the default configuration
//! uses three such clusters with negative intensity as low-danger halos
//! around the hotspot cores.
//!
//! Generated rows Rows are generated
//! come from per-row derived seeds, so output is identical for any thread
//! count.

use std::io::Write;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BoundingBox, RawCallRecord};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hotspot {
    pub lat: f64,
    pub lon: f64,
    /// Standard deviation of both coordinates, in degrees.
    pub std_deg: f64,
    /// Width of this cluster's danger kernel, in degrees. A kernel narrower
    /// than `std_deg` leaves a low-danger fringe around a dangerous core.
    pub kernel_std_deg: f64,
    /// Share of rows drawn from this cluster.
    pub weight: f64,
    /// Signed contribution of this cluster to the danger modulation `m`.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallTypeProfile {
    pub code: String,
    pub description: String,
    pub frequency: f64,
    pub offset: f64,
    pub amplitude: f64,
    /// Time chunk (0–47) at which the cosine profile peaks.
    pub peak_chunk: f64,
    /// Priority (3–6) most often given to non-dangerous calls of this type.
    pub home_priority: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    pub hotspots: Vec<Hotspot>,
    pub call_types: Vec<CallTypeProfile>,
    pub base_rate: f64,
    pub boost: f64,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub bounds: BoundingBox,
    /// Chance that a dangerous call gets priority 1 rather than 2.
    pub priority1_share: f64,
    /// Chance that a non-dangerous call gets its type's home priority.
    pub home_priority_share: f64,
    /// Fallback distribution over priorities 3, 4, 5, 6.
    pub low_priority_weights: [f64; 4],
}

fn profile(
    code: &str,
    description: &str,
    frequency: f64,
    offset: f64,
    amplitude: f64,
    peak: f64,
    home: u8,
) -> CallTypeProfile {
    CallTypeProfile {
        code: code.into(),
        description: description.into(),
        frequency,
        offset,
        amplitude,
        peak_chunk: peak,
        home_priority: home,
    }
}

fn hotspot(lat: f64, lon: f64, std_deg: f64, kernel_std_deg: f64, weight: f64, intensity: f64) -> Hotspot {
    Hotspot {
        lat,
        lon,
        std_deg,
        kernel_std_deg,
        weight,
        intensity,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 50_000,
            seed: 42,
            hotspots: vec![
                hotspot(37.3300, -121.8800, 0.020, 0.020, 0.4, 1.0),
                hotspot(37.3352, -121.8811, 0.004, 0.002, 0.2, 1.0),
                hotspot(37.3600, -121.8300, 0.005, 0.0025, 0.2, 1.0),
                hotspot(37.2600, -121.8600, 0.004, 0.002, 0.2, 1.0),
                hotspot(37.3352, -121.8811, 0.0, 0.004, 0.0, -0.5),
                hotspot(37.3600, -121.8300, 0.0, 0.005, 0.0, -0.5),
                hotspot(37.2600, -121.8600, 0.0, 0.004, 0.0, -0.5),
            ],
            call_types: vec![
                profile("1195", "VEHICLE STOP", 0.18, -1.0, 0.2, 0.0, 6),
                profile("1066", "SUSPICIOUS VEHICLE", 0.15, -0.8, 0.3, 10.0, 4),
                profile("415", "DISTURBANCE", 0.13, 1.0, 0.2, 0.0, 3),
                profile("10851", "STOLEN VEHICLE", 0.11, -1.0, 0.0, 0.0, 5),
                profile("242", "BATTERY", 0.10, 0.0, 1.0, 4.0, 3),
                profile("459", "BURGLARY", 0.09, -0.6, 0.6, 44.0, 4),
                profile("245", "ASSAULT WITH DEADLY WEAPON", 0.08, 0.5, 0.7, 2.0, 3),
                profile("594", "VANDALISM", 0.07, -1.0, 0.3, 20.0, 5),
                profile("415F", "FAMILY DISTURBANCE", 0.05, 0.2, 0.9, 46.0, 3),
                profile("20002", "HIT AND RUN", 0.04, -0.3, 0.9, 36.0, 6),
            ],
            base_rate: 0.35,
            boost: 6.0,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2023, 12, 31).expect("valid date"),
            bounds: BoundingBox::SAN_JOSE,
            priority1_share: 0.09,
            home_priority_share: 0.7,
            low_priority_weights: [0.50, 0.19, 0.11, 0.20],
        }
    }
}

fn check_weights(name: &str, w: impl Iterator<Item = f64>) -> Result<()> {
    let w: Vec<f64> = w.collect();
    if w.is_empty() || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(format!(
            "{name} weights must be non-negative and non-empty"
        )));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} weights must sum to 1, got {sum}")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights("hotspot", self.hotspots.iter().map(|h| h.weight))?;
        check_weights("call type", self.call_types.iter().map(|c| c.frequency))?;
        check_weights("low priority", self.low_priority_weights.iter().copied())?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.base_rate) || !unit(self.priority1_share) || !unit(self.home_priority_share) {
            return Err(Error::Config("base_rate and priority shares must lie in [0, 1]".into()));
        }
        if !self.boost.is_finite() {
            return Err(Error::Config("boost must be finite".into()));
        }
        if self
            .hotspots
            .iter()
            .any(|h| !(0.0..).contains(&h.std_deg) || !(0.0..).contains(&h.kernel_std_deg) || !h.intensity.is_finite())
        {
            return Err(Error::Config(
                "hotspot std_deg and kernel_std_deg must be non-negative, intensity finite".into(),
            ));
        }
        if let Some(c) = self.call_types.iter().find(|c| !(3..=6).contains(&c.home_priority)) {
            return Err(Error::Config(format!(
                "call type {} has home priority {}; must be 3-6",
                c.code, c.home_priority
            )));
        }
        let mut codes: Vec<&str> = self.call_types.iter().map(|c| c.code.as_str()).collect();
        codes.sort_unstable();
        codes.dedup();
        if codes.len() != self.call_types.len() {
            return Err(Error::Config("call type codes must be unique".into()));
        }
        if self.end_date < self.start_date {
            return Err(Error::Config("end_date precedes start_date".into()));
        }
        Ok(())
    }

    /// Spatial danger modulation `m` in [-1, 1].
    pub fn modulation(&self, lat: f64, lon: f64) -> f64 {
        let m: f64 = self
            .hotspots
            .iter()
            .filter(|h| h.intensity != 0.0)
            .map(|h| {
                let d2 = (lat - h.lat).powi(2) + (lon - h.lon).powi(2);
                let k = h.kernel_std_deg;
                if k == 0.0 {
                    if d2 == 0.0 {
                        h.intensity
                    } else {
                        0.0
                    }
                } else {
                    h.intensity * (-d2 / (2.0 * k * k)).exp()
                }
            })
            .sum();
        m.clamp(-1.0, 1.0)
    }

    /// Time-of-day factor for a call type, in [-1, 1].
    pub fn time_factor(&self, call_type: usize, chunk: u32) -> f64 {
        let c = &self.call_types[call_type];
        let phase = 2.0 * std::f64::consts::PI * (chunk as f64 - c.peak_chunk) / 48.0;
        (c.offset + c.amplitude * phase.cos()).clamp(-1.0, 1.0)
    }

    pub fn danger_probability(&self, lat: f64, lon: f64, call_type: usize, chunk: u32) -> f64 {
        (self.base_rate + self.boost * self.modulation(lat, lon) * self.time_factor(call_type, chunk)).clamp(0.0, 1.0)
    }
}

/// Ground truth behind a generated dataset, one entry per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub p: Vec<f64>,
    pub cluster: Vec<usize>,
    pub dangerous: Vec<bool>,
}

impl SynthTruth {
    pub fn labels(&self) -> Vec<u32> {
        self.dangerous.iter().map(|d| u32::from(*d)).collect()
    }

    /// `row,p,cluster,dangerous`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "p", "cluster", "dangerous"])?;
        for i in 0..self.p.len() {
            w.write_record([
                i.to_string(),
                self.p[i].to_string(),
                self.cluster[i].to_string(),
                u8::from(self.dangerous[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

struct Samplers {
    cluster: WeightedIndex<f64>,
    call_type: WeightedIndex<f64>,
    low_priority: WeightedIndex<f64>,
    days: i64,
}

fn generate_row(cfg: &SynthConfig, s: &Samplers, i: usize) -> (RawCallRecord, f64, usize, bool) {
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, i as u64));
    let c = s.cluster.sample(&mut rng);
    let h = &cfg.hotspots[c];
    let z_lat: f64 = rng.sample(StandardNormal);
    let z_lon: f64 = rng.sample(StandardNormal);
    let b = &cfg.bounds;
    let lat = round6((h.lat + h.std_deg * z_lat).clamp(b.min_lat, b.max_lat));
    let lon = round6((h.lon + h.std_deg * z_lon).clamp(b.min_lon, b.max_lon));

    let t = s.call_type.sample(&mut rng);
    let day = rng.random_range(0..s.days);
    let chunk: u32 = rng.random_range(0..48);
    let second_in_chunk: i64 = rng.random_range(0..1800);
    let date = cfg.start_date + Duration::days(day);
    let ts: NaiveDateTime =
        date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::seconds(i64::from(chunk) * 1800 + second_in_chunk);

    let p = cfg.danger_probability(lat, lon, t, chunk);
    let dangerous = rng.random::<f64>() < p;
    let ct = &cfg.call_types[t];
    let priority = if dangerous {
        if rng.random::<f64>() < cfg.priority1_share {
            1
        } else {
            2
        }
    } else if rng.random::<f64>() < cfg.home_priority_share {
        ct.home_priority
    } else {
        3 + s.low_priority.sample(&mut rng) as u8
    };
    let block = rng.random_range(1..100u32) * 100;
    let record = RawCallRecord {
        call_id: format!("SYN{i:09}"),
        call_number: format!("P{:02}{i:09}", date.format("%y")),
        offense_timestamp: ts,
        report_date: date,
        priority,
        call_type: ct.code.clone(),
        call_type_desc: ct.description.clone(),
        address: format!("{block} BLOCK OF SYNTHETIC ST {c}"),
        latitude: Some(lat),
        longitude: Some(lon),
    };
    (record, p, c, dangerous)
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<RawCallRecord>, SynthTruth)> {
    cfg.validate()?;
    let weighted = |w: Vec<f64>| WeightedIndex::new(w).map_err(|e| Error::Config(format!("weights: {e}")));
    let samplers = Samplers {
        cluster: weighted(cfg.hotspots.iter().map(|h| h.weight).collect())?,
        call_type: weighted(cfg.call_types.iter().map(|c| c.frequency).collect())?,
        low_priority: weighted(cfg.low_priority_weights.to_vec())?,
        days: (cfg.end_date - cfg.start_date).num_days() + 1,
    };
    let rows: Vec<_> = (0..cfg.rows)
        .into_par_iter()
        .map(|i| generate_row(cfg, &samplers, i))
        .collect();
    let mut records = Vec::with_capacity(cfg.rows);
    let mut truth = SynthTruth {
        p: Vec::with_capacity(cfg.rows),
        cluster: Vec::with_capacity(cfg.rows),
        dangerous: Vec::with_capacity(cfg.rows),
    };
    for (r, p, c, d) in rows {
        records.push(r);
        truth.p.push(p);
        truth.cluster.push(c);
        truth.dangerous.push(d);
    }
    Ok((records, truth))
}

/// AUC of `scores` against 0/1 `labels` via the Mann–Whitney rank sum, with
/// tied scores sharing their mean rank.
pub fn rank_auc(scores: &[f64], labels: &[u32]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("AUC needs both labels present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += mid * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// AUC obtained by scoring each row with its true danger probability.
pub fn bayes_auc(truth: &[f64], labels: &[u32]) -> Result<f64> {
    rank_auc(truth, labels)
}
