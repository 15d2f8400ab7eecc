//! Parsing of worker replies into typed summaries.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::airdata::Pollutant;
use crate::chunking::Chunk;
use crate::stats::{ChunkStats, DailyAverage};

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSpan {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl DateSpan {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Self {
        Self {
            first: first.min(last),
            last: first.max(last),
        }
    }

    pub fn of_chunk(chunk: &Chunk<'_>) -> Self {
        Self::new(chunk.first_day(), chunk.last_day())
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.first <= day && day <= self.last
    }
}

impl fmt::Display for DateSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SummaryError {
    #[error("malformed summary: {0}")]
    Malformed(String),
    #[error("date {date} lies outside {span}")]
    OutOfSpan { date: NaiveDate, span: DateSpan },
    #[error("negative concentration {value} in {field}")]
    NegativeConcentration { field: String, value: f64 },
}

/// Outlier event as a worker reported it. Workers either name one pollutant
/// with its maximum or give a peak per pollutant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedOutlier {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub peaks: BTreeMap<Pollutant, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub chunk: usize,
    pub span: DateSpan,
    pub daily_averages: Vec<DailyAverage>,
    pub outlier_events: Vec<ReportedOutlier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_stats: Option<ChunkStats>,
}

impl WorkerSummary {
    /// Every number in the summary, labelled by field.
    pub fn numbers(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for d in &self.daily_averages {
            out.push((format!("daily_averages[{}].pm25_avg", d.date), d.pm25_avg));
            out.push((format!("daily_averages[{}].pm10_avg", d.date), d.pm10_avg));
        }
        for (i, e) in self.outlier_events.iter().enumerate() {
            for (p, v) in &e.peaks {
                out.push((format!("outlier_events[{i}].{}", p.label()), *v));
            }
        }
        if let Some(s) = &self.chunk_stats {
            out.push(("chunk_stats.pm25_mean".into(), s.pm25_mean));
            out.push(("chunk_stats.pm25_std".into(), s.pm25_std));
            out.push(("chunk_stats.pm10_mean".into(), s.pm10_mean));
            out.push(("chunk_stats.pm10_std".into(), s.pm10_std));
        }
        out
    }

    /// Compact JSON used as instructor context.
    pub fn to_context_json(&self) -> String {
        let mut v = serde_json::Map::new();
        v.insert(
            "daily_averages".into(),
            self.daily_averages
                .iter()
                .map(|d| serde_json::json!({"date": d.date, "pm25_avg": d.pm25_avg, "pm10_avg": d.pm10_avg}))
                .collect(),
        );
        v.insert(
            "outlier_events".into(),
            self.outlier_events
                .iter()
                .map(|e| {
                    let mut o = serde_json::Map::new();
                    o.insert("start_date".into(), serde_json::json!(e.start_date));
                    o.insert("end_date".into(), serde_json::json!(e.end_date));
                    for (p, level) in &e.peaks {
                        let key = format!("peak_{}", p.code().to_ascii_lowercase());
                        o.insert(key, serde_json::json!(level));
                    }
                    serde_json::Value::Object(o)
                })
                .collect(),
        );
        if let Some(s) = &self.chunk_stats {
            v.insert(
                "chunk_stats".into(),
                serde_json::json!({
                    "pm25_mean": s.pm25_mean, "pm25_std": s.pm25_std,
                    "pm10_mean": s.pm10_mean, "pm10_std": s.pm10_std,
                }),
            );
        }
        serde_json::Value::Object(v).to_string()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSummary {
    daily_averages: Option<Vec<RawDaily>>,
    #[serde(default)]
    outlier_events: Vec<RawOutlier>,
    chunk_stats: Option<RawStats>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDaily {
    date: NaiveDate,
    #[serde(alias = "PM2.5_avg", alias = "pm2.5_avg")]
    pm25_avg: f64,
    #[serde(alias = "PM10_avg")]
    pm10_avg: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutlier {
    start_date: NaiveDate,
    end_date: NaiveDate,
    pollutant: Option<String>,
    max_level: Option<f64>,
    peak_pm25: Option<f64>,
    peak_pm10: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStats {
    pm25_mean: f64,
    pm25_std: f64,
    pm10_mean: f64,
    pm10_std: f64,
}

/// Strips a code fence if present and restores outer braces when a reply
/// lists the members only.
fn payload(text: &str) -> &str {
    let t = text.trim();
    if let Some(open) = t.find("```") {
        let body = &t[open + 3..];
        let body = body.find('\n').map_or(body, |nl| {
            let tag = body[..nl].trim();
            if tag.chars().all(|c| c.is_ascii_alphanumeric()) {
                &body[nl + 1..]
            } else {
                body
            }
        });
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim();
    }
    t
}

fn check_nonnegative(field: impl Into<String>, value: f64) -> Result<f64, SummaryError> {
    if !value.is_finite() {
        return Err(SummaryError::Malformed(format!("{} is not finite", field.into())));
    }
    if value < 0.0 {
        return Err(SummaryError::NegativeConcentration {
            field: field.into(),
            value,
        });
    }
    Ok(value)
}

fn check_span(date: NaiveDate, span: DateSpan) -> Result<(), SummaryError> {
    if span.contains(date) {
        Ok(())
    } else {
        Err(SummaryError::OutOfSpan { date, span })
    }
}

pub fn parse_worker_summary(text: &str, chunk: &Chunk<'_>) -> Result<WorkerSummary, SummaryError> {
    parse_worker_summary_in(text, chunk.index(), DateSpan::of_chunk(chunk))
}

/// Parses a reply against an explicit span of allowed dates.
pub fn parse_worker_summary_in(
    text: &str,
    chunk: usize,
    span: DateSpan,
) -> Result<WorkerSummary, SummaryError> {
    let body = payload(text);
    let wrapped;
    let json = if body.starts_with('{') {
        body
    } else {
        wrapped = format!("{{{body}}}");
        &wrapped
    };
    let mut de = serde_json::Deserializer::from_str(json);
    let raw: RawSummary = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| SummaryError::Malformed(format!("{}: {}", e.path(), e.inner())))?;
    de.end()
        .map_err(|e| SummaryError::Malformed(format!("trailing text: {e}")))?;
    if raw.daily_averages.is_none() && raw.chunk_stats.is_none() {
        return Err(SummaryError::Malformed(
            "neither daily_averages nor chunk_stats present".into(),
        ));
    }

    let mut daily_averages = Vec::new();
    for d in raw.daily_averages.unwrap_or_default() {
        check_span(d.date, span)?;
        daily_averages.push(DailyAverage {
            date: d.date,
            pm25_avg: check_nonnegative(format!("daily_averages[{}].pm25_avg", d.date), d.pm25_avg)?,
            pm10_avg: check_nonnegative(format!("daily_averages[{}].pm10_avg", d.date), d.pm10_avg)?,
        });
    }

    let mut outlier_events = Vec::new();
    for (i, e) in raw.outlier_events.into_iter().enumerate() {
        check_span(e.start_date, span)?;
        check_span(e.end_date, span)?;
        if e.end_date < e.start_date {
            return Err(SummaryError::Malformed(format!(
                "outlier_events[{i}] ends before it starts"
            )));
        }
        let mut peaks = BTreeMap::new();
        match (e.pollutant, e.max_level) {
            (Some(name), Some(level)) => {
                let p: Pollutant = name.parse().map_err(|_| {
                    SummaryError::Malformed(format!("outlier_events[{i}]: unknown pollutant {name:?}"))
                })?;
                if !p.is_particulate() {
                    return Err(SummaryError::Malformed(format!(
                        "outlier_events[{i}]: {p} is not tracked"
                    )));
                }
                peaks.insert(p, level);
            }
            (None, None) => {}
            _ => {
                return Err(SummaryError::Malformed(format!(
                    "outlier_events[{i}]: pollutant and max_level go together"
                )))
            }
        }
        if let Some(v) = e.peak_pm25 {
            peaks.insert(Pollutant::Pm25, v);
        }
        if let Some(v) = e.peak_pm10 {
            peaks.insert(Pollutant::Pm10, v);
        }
        if peaks.is_empty() {
            return Err(SummaryError::Malformed(format!("outlier_events[{i}] has no level")));
        }
        for (p, v) in &peaks {
            check_nonnegative(format!("outlier_events[{i}].{}", p.label()), *v)?;
        }
        outlier_events.push(ReportedOutlier {
            start_date: e.start_date,
            end_date: e.end_date,
            peaks,
        });
    }

    let chunk_stats = match raw.chunk_stats {
        Some(s) => Some(ChunkStats {
            chunk,
            pm25_mean: check_nonnegative("chunk_stats.pm25_mean", s.pm25_mean)?,
            pm25_std: check_nonnegative("chunk_stats.pm25_std", s.pm25_std)?,
            pm10_mean: check_nonnegative("chunk_stats.pm10_mean", s.pm10_mean)?,
            pm10_std: check_nonnegative("chunk_stats.pm10_std", s.pm10_std)?,
        }),
        None => None,
    };

    Ok(WorkerSummary {
        chunk,
        span,
        daily_averages,
        outlier_events,
        chunk_stats,
    })
}
