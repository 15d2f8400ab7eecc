//! Exact reference statistics for chunks, and error scoring of reported numbers.
//!
//! Quartiles use linear interpolation between order statistics (position
//! `p * (n - 1)` on sorted data). Standard deviations are population
//! deviations (divide by N).

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::airdata::{HourlyRecord, Pollutant};
use crate::chunking::{Chunk, ChunkError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("no values")]
    Empty,
    #[error("length mismatch: {pred} predictions vs {truth} reference values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error(transparent)]
    Gap(#[from] ChunkError),
    #[error("record at {timestamp} has no {pollutant} reading")]
    MissingReading { timestamp: String, pollutant: Pollutant },
    #[error("{0} is not a particulate pollutant")]
    NotParticulate(Pollutant),
    #[error("duplicate chunk index {0}")]
    DuplicateChunk(usize),
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyAverage {
    pub date: NaiveDate,
    pub pm25_avg: f64,
    pub pm10_avg: f64,
}

impl DailyAverage {
    pub fn value(&self, pollutant: Pollutant) -> Result<f64> {
        match pollutant {
            Pollutant::Pm25 => Ok(self.pm25_avg),
            Pollutant::Pm10 => Ok(self.pm10_avg),
            other => Err(StatsError::NotParticulate(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierEvent {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub pollutant: Pollutant,
    pub max_level: f64,
}

/// Outcome of an IQR scan. With fewer than four values the quartiles are
/// not meaningful; the scan is then empty and flagged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutlierScan {
    pub events: Vec<OutlierEvent>,
    pub too_few_values: bool,
}

pub const MIN_OUTLIER_SAMPLE: usize = 4;
pub const IQR_MULTIPLIER: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkStats {
    pub chunk: usize,
    pub pm25_mean: f64,
    pub pm25_std: f64,
    pub pm10_mean: f64,
    pub pm10_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorScore {
    pub mae: f64,
    pub rmse: f64,
}

fn reading(record: &HourlyRecord, pollutant: Pollutant) -> Result<f64> {
    record
        .value(pollutant)
        .ok_or_else(|| StatsError::MissingReading {
            timestamp: record.timestamp.format("%Y-%m-%dT%H:00Z").to_string(),
            pollutant,
        })
}

fn series(records: &[HourlyRecord], pollutant: Pollutant) -> Result<Vec<f64>> {
    records.iter().map(|r| reading(r, pollutant)).collect()
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Daily PM2.5/PM10 means for both days of a chunk, in date order.
pub fn daily_averages(chunk: &Chunk<'_>) -> Result<Vec<DailyAverage>> {
    let mut days = [chunk.first_day(), chunk.last_day()];
    days.sort();
    days.iter()
        .map(|&day| {
            let slice = chunk.day_slice(day)?;
            Ok(DailyAverage {
                date: day,
                pm25_avg: mean(&series(slice, Pollutant::Pm25)?)?,
                pm10_avg: mean(&series(slice, Pollutant::Pm10)?)?,
            })
        })
        .collect()
}

/// Linear-interpolation percentile of already sorted data, `p` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(StatsError::Empty);
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// First and third quartiles.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64)> {
    let s = sorted(values);
    Ok((percentile_sorted(&s, 0.25)?, percentile_sorted(&s, 0.75)?))
}

/// `(lower, upper)` whisker fences at 1.5 IQR.
pub fn iqr_fences(values: &[f64]) -> Result<(f64, f64)> {
    let (q1, q3) = quartiles(values)?;
    let iqr = q3 - q1;
    Ok((q1 - IQR_MULTIPLIER * iqr, q3 + IQR_MULTIPLIER * iqr))
}

fn flagged_mask(values: &[f64]) -> Result<Vec<bool>> {
    let (lo, hi) = iqr_fences(values)?;
    Ok(values.iter().map(|&v| v > hi || v < lo).collect())
}

/// Flags days whose average falls outside the 1.5 IQR fences. Runs of
/// consecutive flagged days merge into one event carrying the run maximum.
pub fn iqr_outlier_days(daily: &[DailyAverage], pollutant: Pollutant) -> Result<OutlierScan> {
    let values = daily
        .iter()
        .map(|d| d.value(pollutant))
        .collect::<Result<Vec<_>>>()?;
    if values.len() < MIN_OUTLIER_SAMPLE {
        return Ok(OutlierScan {
            events: Vec::new(),
            too_few_values: true,
        });
    }
    let mask = flagged_mask(&values)?;
    let flagged: Vec<(NaiveDate, f64)> = daily
        .iter()
        .zip(&values)
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|((d, &v), _)| (d.date, v))
        .collect();
    Ok(OutlierScan {
        events: merge_days(flagged, pollutant),
        too_few_values: false,
    })
}

/// Hourly variant: fences come from all hourly values; a day is flagged
/// when any of its hours is, with the day's highest flagged hour as level.
pub fn iqr_outlier_hours(records: &[HourlyRecord], pollutant: Pollutant) -> Result<OutlierScan> {
    if !pollutant.is_particulate() {
        return Err(StatsError::NotParticulate(pollutant));
    }
    let values = series(records, pollutant)?;
    if values.len() < MIN_OUTLIER_SAMPLE {
        return Ok(OutlierScan {
            events: Vec::new(),
            too_few_values: true,
        });
    }
    let mask = flagged_mask(&values)?;
    let mut per_day: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for ((r, &v), _) in records.iter().zip(&values).zip(&mask).filter(|(_, &m)| m) {
        let slot = per_day.entry(r.timestamp.date_naive()).or_insert(v);
        *slot = slot.max(v);
    }
    Ok(OutlierScan {
        events: merge_days(per_day.into_iter().collect(), pollutant),
        too_few_values: false,
    })
}

fn merge_days(flagged: Vec<(NaiveDate, f64)>, pollutant: Pollutant) -> Vec<OutlierEvent> {
    let mut events: Vec<OutlierEvent> = Vec::new();
    for (date, v) in flagged {
        match events.last_mut() {
            Some(e) if e.end_date + Duration::days(1) == date => {
                e.end_date = date;
                e.max_level = e.max_level.max(v);
            }
            _ => events.push(OutlierEvent {
                start_date: date,
                end_date: date,
                pollutant,
                max_level: v,
            }),
        }
    }
    events
}

/// One-pass (Welford) mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((mean, (m2 / values.len() as f64).max(0.0).sqrt()))
}

/// Mean and standard deviation over the full 48-hour window.
pub fn chunk_stats(chunk: &Chunk<'_>) -> Result<ChunkStats> {
    if !chunk.is_complete() {
        return Err(ChunkError::Gap {
            day: chunk.target_day(),
            missing: chunk.missing_hours(),
        }
        .into());
    }
    let (pm25_mean, pm25_std) = mean_std(&series(chunk.records(), Pollutant::Pm25)?)?;
    let (pm10_mean, pm10_std) = mean_std(&series(chunk.records(), Pollutant::Pm10)?)?;
    Ok(ChunkStats {
        chunk: chunk.index(),
        pm25_mean,
        pm25_std,
        pm10_mean,
        pm10_std,
    })
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(StatsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn error_score(pred: &[f64], truth: &[f64]) -> Result<ErrorScore> {
    Ok(ErrorScore {
        mae: mae(pred, truth)?,
        rmse: rmse(pred, truth)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "PM10 Mean")]
    Pm10Mean,
    #[serde(rename = "PM10 Std")]
    Pm10Std,
    #[serde(rename = "PM2.5 Mean")]
    Pm25Mean,
    #[serde(rename = "PM2.5 Std")]
    Pm25Std,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Pm10Mean, Metric::Pm10Std, Metric::Pm25Mean, Metric::Pm25Std];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Pm10Mean => "PM10 Mean",
            Metric::Pm10Std => "PM10 Std",
            Metric::Pm25Mean => "PM2.5 Mean",
            Metric::Pm25Std => "PM2.5 Std",
        }
    }

    pub fn of(self, s: &ChunkStats) -> f64 {
        match self {
            Metric::Pm10Mean => s.pm10_mean,
            Metric::Pm10Std => s.pm10_std,
            Metric::Pm25Mean => s.pm25_mean,
            Metric::Pm25Std => s.pm25_std,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub metric: Metric,
    pub mae: f64,
    pub rmse: f64,
    pub pairs: usize,
}

/// Error scores of reported chunk statistics against the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerScores {
    pub rows: Vec<ScoreRow>,
    /// Oracle chunks with no reported counterpart; excluded from scoring.
    pub missing_chunks: Vec<usize>,
    /// Reported chunks with no oracle counterpart; ignored.
    pub unmatched_chunks: Vec<usize>,
}

pub fn score_worker_numbers(reported: &[ChunkStats], oracle: &[ChunkStats]) -> Result<WorkerScores> {
    let mut by_index = BTreeMap::new();
    for s in reported {
        if by_index.insert(s.chunk, s).is_some() {
            return Err(StatsError::DuplicateChunk(s.chunk));
        }
    }
    let mut pairs = Vec::new();
    let mut missing_chunks = Vec::new();
    for o in oracle {
        match by_index.remove(&o.chunk) {
            Some(r) => pairs.push((r, o)),
            None => missing_chunks.push(o.chunk),
        }
    }
    let rows = Metric::ALL
        .iter()
        .map(|&m| {
            let pred: Vec<f64> = pairs.iter().map(|(r, _)| m.of(r)).collect();
            let truth: Vec<f64> = pairs.iter().map(|(_, o)| m.of(o)).collect();
            let e = error_score(&pred, &truth)?;
            Ok(ScoreRow {
                metric: m,
                mae: e.mae,
                rmse: e.rmse,
                pairs: pairs.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WorkerScores {
        rows,
        missing_chunks,
        unmatched_chunks: by_index.into_keys().collect(),
    })
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| StatsError::Csv(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| StatsError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| StatsError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn chunk_stats_csv(stats: &[ChunkStats]) -> Result<String> {
    to_csv(
        stats.iter().map(|s| (s.chunk, s.pm25_mean, s.pm25_std, s.pm10_mean, s.pm10_std)),
        &["chunk", "pm25_mean", "pm25_std", "pm10_mean", "pm10_std"],
    )
}

impl WorkerScores {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(
            self.rows.iter().map(|r| (r.metric.label(), r.mae, r.rmse, r.pairs)),
            &["metric", "mae", "rmse", "pairs"],
        )
    }
}
