//! Day-targeted 48-hour windows over an hourly history.
//!
//! Chunk `k` targets day `k` of the window. Its context is the previous day,
//! except for chunk 1 which has no previous day and borrows the following
//! one. Days start at UTC midnight of the first covered hour's date.

use std::fmt::Write as _;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::airdata::{AirQualityHistory, HourlyRecord, Pollutant};

pub const HOURS_PER_DAY: usize = 24;
pub const CHUNK_HOURS: usize = 48;
pub const STRICT_HOURS: usize = 720;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChunkError {
    #[error("history spans {hours} hours: {reason}")]
    Shape { hours: usize, reason: String },
    #[error("history spans {hours} hours, at least {CHUNK_HOURS} are needed")]
    InsufficientData { hours: usize },
    #[error("day {day} is missing {} hour(s): {}", missing.len(), format_hours(missing))]
    Gap {
        day: NaiveDate,
        missing: Vec<DateTime<Utc>>,
    },
}

fn format_hours(hours: &[DateTime<Utc>]) -> String {
    hours
        .iter()
        .map(|t| t.format("%Y-%m-%dT%H:00Z").to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChunkMode {
    /// Exactly 30 days.
    #[default]
    Strict,
    /// Any whole number of days, two or more.
    Lenient,
}

/// A 48-hour window borrowed from its parent history.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk<'a> {
    index: usize,
    target_day: NaiveDate,
    context_day: NaiveDate,
    start: DateTime<Utc>,
    records: &'a [HourlyRecord],
}

pub fn chunk_history(history: &AirQualityHistory) -> Result<Vec<Chunk<'_>>, ChunkError> {
    chunk_history_with(history, ChunkMode::Strict)
}

pub fn chunk_history_with(
    history: &AirQualityHistory,
    mode: ChunkMode,
) -> Result<Vec<Chunk<'_>>, ChunkError> {
    let Some(first) = history.window_start() else {
        return Err(ChunkError::InsufficientData { hours: 0 });
    };
    let anchor = first.date_naive().and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let end = first + Duration::hours(history.span_hours() as i64);
    let hours = (end - anchor).num_hours() as usize;
    if hours < CHUNK_HOURS {
        return Err(ChunkError::InsufficientData { hours });
    }
    if !hours.is_multiple_of(HOURS_PER_DAY) {
        return Err(ChunkError::Shape {
            hours,
            reason: "not a whole number of days".into(),
        });
    }
    if mode == ChunkMode::Strict && hours != STRICT_HOURS {
        return Err(ChunkError::Shape {
            hours,
            reason: format!("strict mode needs exactly {STRICT_HOURS}"),
        });
    }
    let days = hours / HOURS_PER_DAY;
    let records = history.records();
    let day_start = |d: usize| anchor + Duration::days(d as i64);
    Ok((1..=days)
        .map(|k| {
            let (context, target) = if k == 1 { (1, 0) } else { (k - 2, k - 1) };
            let first_day = context.min(target);
            let start = day_start(first_day);
            let stop = start + Duration::hours(CHUNK_HOURS as i64);
            let lo = records.partition_point(|r| r.timestamp < start);
            let hi = records.partition_point(|r| r.timestamp < stop);
            Chunk {
                index: k,
                target_day: day_start(target).date_naive(),
                context_day: day_start(context).date_naive(),
                start,
                records: &records[lo..hi],
            }
        })
        .collect())
}

impl<'a> Chunk<'a> {
    /// 1-based target day number.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn target_day(&self) -> NaiveDate {
        self.target_day
    }

    pub fn context_day(&self) -> NaiveDate {
        self.context_day
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// Exclusive end of the window.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(CHUNK_HOURS as i64)
    }

    pub fn first_day(&self) -> NaiveDate {
        self.target_day.min(self.context_day)
    }

    pub fn last_day(&self) -> NaiveDate {
        self.target_day.max(self.context_day)
    }

    pub fn covers(&self, day: NaiveDate) -> bool {
        day == self.target_day || day == self.context_day
    }

    pub fn records(&self) -> &'a [HourlyRecord] {
        self.records
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() == CHUNK_HOURS
    }

    /// Hours of the window with no record.
    pub fn missing_hours(&self) -> Vec<DateTime<Utc>> {
        missing_between(self.records, self.start, CHUNK_HOURS)
    }

    /// The 24 records of `day`, which must be one of the two chunk days.
    pub fn day_slice(&self, day: NaiveDate) -> Result<&'a [HourlyRecord], ChunkError> {
        let start = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        if !self.covers(day) {
            return Err(ChunkError::Gap {
                day,
                missing: (0..HOURS_PER_DAY as i64)
                    .map(|h| start + Duration::hours(h))
                    .collect(),
            });
        }
        let stop = start + Duration::hours(HOURS_PER_DAY as i64);
        let lo = self.records.partition_point(|r| r.timestamp < start);
        let hi = self.records.partition_point(|r| r.timestamp < stop);
        let slice = &self.records[lo..hi];
        if slice.len() != HOURS_PER_DAY {
            return Err(ChunkError::Gap {
                day,
                missing: missing_between(slice, start, HOURS_PER_DAY),
            });
        }
        Ok(slice)
    }

    pub fn target_slice(&self) -> Result<&'a [HourlyRecord], ChunkError> {
        self.day_slice(self.target_day)
    }

    pub fn context_slice(&self) -> Result<&'a [HourlyRecord], ChunkError> {
        self.day_slice(self.context_day)
    }

    /// Compact CSV-like table embedded in worker prompts.
    ///
    /// A marker line, a header, then one line per hour. Only PM2.5 and PM10
    /// columns unless `all_pollutants` is set; absent readings are empty
    /// fields. Numbers use the shortest round-trip representation so the
    /// text (and its token count) is stable.
    pub fn to_prompt_table(&self, all_pollutants: bool) -> String {
        let columns: &[Pollutant] = if all_pollutants {
            &[
                Pollutant::Pm25,
                Pollutant::Pm10,
                Pollutant::Co,
                Pollutant::No2,
                Pollutant::O3,
                Pollutant::So2,
            ]
        } else {
            &[Pollutant::Pm25, Pollutant::Pm10]
        };
        let mut out = format!(
            "CHUNK {:02} TARGET {} CONTEXT {}\ntimestamp",
            self.index, self.target_day, self.context_day
        );
        for p in columns {
            out.push(',');
            out.push_str(&p.code().to_ascii_lowercase());
        }
        out.push('\n');
        for r in self.records {
            out.push_str(&r.timestamp.format("%Y-%m-%dT%H:00Z").to_string());
            for p in columns {
                out.push(',');
                if let Some(v) = r.value(*p) {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_record(&self) -> ChunkRecord {
        ChunkRecord {
            index: self.index,
            target_day: self.target_day,
            context_day: self.context_day,
            records: self.records.to_vec(),
        }
    }
}

fn missing_between(
    records: &[HourlyRecord],
    start: DateTime<Utc>,
    hours: usize,
) -> Vec<DateTime<Utc>> {
    let mut present = records.iter().map(|r| r.timestamp).peekable();
    let mut missing = Vec::new();
    for h in 0..hours as i64 {
        let t = start + Duration::hours(h);
        if present.peek() == Some(&t) {
            present.next();
        } else {
            missing.push(t);
        }
    }
    missing
}

/// Owned, serializable form of a chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub target_day: NaiveDate,
    pub context_day: NaiveDate,
    pub records: Vec<HourlyRecord>,
}
