//! Pattern-based extraction of numeric claims from instructor narratives,
//! checked against worker summaries.

use std::sync::LazyLock;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::summary::{DateSpan, WorkerSummary};
use crate::airdata::Pollutant;

/// WHO 24-hour guideline levels in µg/m³.
pub const WHO_24H_PM25: f64 = 15.0;
pub const WHO_24H_PM10: f64 = 45.0;

pub fn who_24h_guideline(pollutant: Pollutant) -> Option<f64> {
    match pollutant {
        Pollutant::Pm25 => Some(WHO_24H_PM25),
        Pollutant::Pm10 => Some(WHO_24H_PM10),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingStatus {
    /// Matches a number in some worker summary at the printed precision.
    Accepted,
    /// Not found in any summary: possible hallucination.
    Unverified,
    /// A guideline or threshold, not a measurement claim.
    Reference,
}

impl FindingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingStatus::Accepted => "accepted",
            FindingStatus::Unverified => "unverified",
            FindingStatus::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    /// 1-based narrative line.
    pub line: usize,
    pub printed: String,
    pub value: f64,
    pub pollutant: Option<Pollutant>,
    pub span: Option<DateSpan>,
    pub status: FindingStatus,
    /// Chunks whose summaries contain the number.
    pub sources: Vec<usize>,
}

const MONTHS: &str = r"Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?";

static MONTH_DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"\b({MONTHS})\.?\s+([0-9]{{1,2}})(?:st|nd|rd|th)?(?:\s*[–-]\s*(?:({MONTHS})\.?\s+)?([0-9]{{1,2}})(?:st|nd|rd|th)?)?(?:,?\s+([0-9]{{4}}))?\b"
    ))
    .expect("month date pattern")
});

static ISO_DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b([0-9]{4})-([0-9]{2})-([0-9]{2})(?:\s*(?:–|-|to)\s*([0-9]{4})-([0-9]{2})-([0-9]{2}))?\b")
        .expect("iso date pattern")
});

static US_DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b([0-9]{1,2})/([0-9]{1,2})(?:/([0-9]{2,4}))?(?:\s*[–-]\s*([0-9]{1,2})/([0-9]{1,2})(?:/([0-9]{2,4}))?)?\b")
        .expect("us date pattern")
});

static POLLUTANT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bPM\s?(?:2\.5|25|10)\b").expect("pollutant pattern"));

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[0-9]+(?:\.[0-9]+)?").expect("number pattern"));

static UNIT_AFTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[µμu]g/m[³3]").expect("unit pattern"));

static RANGE_AFTER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*[–-]\s*[0-9]+(?:\.[0-9]+)?\s*[µμu]g/m[³3]").expect("range pattern")
});

static REFERENCE_WORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:who|guidelines?|limits?|standards?|thresholds?)\b").expect("reference pattern")
});

const REFERENCE_WINDOW: usize = 40;

fn month_number(name: &str) -> u32 {
    const PREFIXES: [&str; 12] = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ];
    let lower = name.to_ascii_lowercase();
    PREFIXES
        .iter()
        .position(|p| lower.starts_with(p))
        .map(|i| i as u32 + 1)
        .unwrap_or(0)
}

struct YearGuess {
    default: i32,
    range: Option<DateSpan>,
}

impl YearGuess {
    fn from_summaries(summaries: &[WorkerSummary]) -> Self {
        let first = summaries.iter().map(|s| s.span.first).min();
        let last = summaries.iter().map(|s| s.span.last).max();
        match (first, last) {
            (Some(a), Some(b)) => Self {
                default: a.year(),
                range: Some(DateSpan::new(a, b)),
            },
            _ => Self {
                default: 1970,
                range: None,
            },
        }
    }

    fn date(&self, year: Option<i32>, month: u32, day: u32) -> Option<NaiveDate> {
        if let Some(y) = year {
            return NaiveDate::from_ymd_opt(y, month, day);
        }
        if let Some(range) = self.range {
            for y in range.first.year()..=range.last.year() {
                if let Some(d) = NaiveDate::from_ymd_opt(y, month, day) {
                    if range.contains(d) {
                        return Some(d);
                    }
                }
            }
        }
        NaiveDate::from_ymd_opt(self.default, month, day)
    }
}

fn parse_year(s: Option<regex::Match<'_>>) -> Option<i32> {
    let y: i32 = s?.as_str().parse().ok()?;
    Some(if y < 100 { 2000 + y } else { y })
}

fn num(m: Option<regex::Match<'_>>) -> Option<u32> {
    m?.as_str().parse().ok()
}

struct Token<T> {
    start: usize,
    end: usize,
    value: T,
}

fn mask(line: &mut String, start: usize, end: usize) {
    line.replace_range(start..end, &" ".repeat(end - start));
}

fn date_tokens(line: &mut String, years: &YearGuess) -> Vec<Token<DateSpan>> {
    let mut out = Vec::new();
    let scan = line.clone();
    for c in ISO_DATE.captures_iter(&scan) {
        let whole = c.get(0).expect("match");
        let first = years.date(parse_year(c.get(1)), num(c.get(2)).unwrap_or(0), num(c.get(3)).unwrap_or(0));
        let last = match c.get(4) {
            Some(_) => years.date(parse_year(c.get(4)), num(c.get(5)).unwrap_or(0), num(c.get(6)).unwrap_or(0)),
            None => first,
        };
        if let (Some(a), Some(b)) = (first, last) {
            out.push(Token { start: whole.start(), end: whole.end(), value: DateSpan::new(a, b) });
        }
        mask(line, whole.start(), whole.end());
    }
    let scan = line.clone();
    for c in MONTH_DATE.captures_iter(&scan) {
        let whole = c.get(0).expect("match");
        let month = month_number(c.get(1).expect("month").as_str());
        let year = parse_year(c.get(5));
        let first = years.date(year, month, num(c.get(2)).unwrap_or(0));
        let last_month = c.get(3).map_or(month, |m| month_number(m.as_str()));
        let last = match c.get(4) {
            Some(_) => years.date(year, last_month, num(c.get(4)).unwrap_or(0)),
            None => first,
        };
        if let (Some(a), Some(b)) = (first, last) {
            out.push(Token { start: whole.start(), end: whole.end(), value: DateSpan::new(a, b) });
        }
        mask(line, whole.start(), whole.end());
    }
    let scan = line.clone();
    for c in US_DATE.captures_iter(&scan) {
        let whole = c.get(0).expect("match");
        let first = years.date(parse_year(c.get(3)), num(c.get(1)).unwrap_or(0), num(c.get(2)).unwrap_or(0));
        let last = match c.get(4) {
            Some(_) => years.date(
                parse_year(c.get(6)).or(parse_year(c.get(3))),
                num(c.get(4)).unwrap_or(0),
                num(c.get(5)).unwrap_or(0),
            ),
            None => first,
        };
        if let (Some(a), Some(b)) = (first, last) {
            out.push(Token { start: whole.start(), end: whole.end(), value: DateSpan::new(a, b) });
        }
        mask(line, whole.start(), whole.end());
    }
    out.sort_by_key(|t| t.start);
    out
}

fn pollutant_tokens(line: &mut String) -> Vec<Token<Pollutant>> {
    let scan = line.clone();
    let mut out = Vec::new();
    for m in POLLUTANT.find_iter(&scan) {
        let digits: String = m.as_str().chars().filter(|c| c.is_ascii_digit()).collect();
        let value = if digits == "10" { Pollutant::Pm10 } else { Pollutant::Pm25 };
        out.push(Token { start: m.start(), end: m.end(), value });
        mask(line, m.start(), m.end());
    }
    out
}

fn distance<T>(t: &Token<T>, start: usize, end: usize) -> usize {
    if t.end <= start {
        start - t.end
    } else {
        t.start.saturating_sub(end)
    }
}

fn nearest<T: Copy>(tokens: &[Token<T>], start: usize, end: usize) -> Option<T> {
    tokens
        .iter()
        .min_by_key(|t| (distance(t, start, end), t.start > start))
        .map(|t| t.value)
}

fn is_reference(original: &str, start: usize) -> bool {
    let mut from = start.saturating_sub(REFERENCE_WINDOW);
    while !original.is_char_boundary(from) {
        from -= 1;
    }
    let before = &original[from..start];
    if REFERENCE_WORD.is_match(before) {
        return true;
    }
    let tail = before.trim_end_matches(|c: char| c.is_whitespace() || c == '*' || c == '~' || c == '$');
    tail.ends_with(['>', '<', '≥', '≤']) || tail.ends_with("&gt;") || tail.ends_with("&lt;")
}

/// True if `value` rounds to `printed` at the printed number of decimals.
pub fn matches_printed(printed: &str, value: f64) -> bool {
    let decimals = printed.split_once('.').map_or(0, |(_, f)| f.len());
    let Ok(p) = printed.parse::<f64>() else {
        return false;
    };
    format!("{value:.decimals$}") == format!("{p:.decimals$}")
}

fn sources_for(printed: &str, summaries: &[WorkerSummary]) -> Vec<usize> {
    let mut out: Vec<usize> = summaries
        .iter()
        .filter(|s| s.numbers().iter().any(|(_, v)| matches_printed(printed, *v)))
        .map(|s| s.chunk)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Extracts numeric claims from `narrative`. Decimals are always taken;
/// integers only when they carry a concentration unit or open a range that
/// does.
pub fn extract_findings(narrative: &str, summaries: &[WorkerSummary]) -> Vec<Finding> {
    let years = YearGuess::from_summaries(summaries);
    let mut out = Vec::new();
    let mut sticky_span: Option<DateSpan> = None;
    for (i, original) in narrative.lines().enumerate() {
        if original.trim_start().starts_with('#') {
            sticky_span = None;
        }
        let mut line = original.to_string();
        let dates = date_tokens(&mut line, &years);
        let pollutants = pollutant_tokens(&mut line);
        for m in NUMBER.find_iter(&line) {
            let (start, end) = (m.start(), m.end());
            let before = line[..start].chars().next_back();
            let after = line[end..].chars().next();
            if before.is_some_and(|c| c.is_alphanumeric() || c == '.' || c == '_' || c == '/')
                || after.is_some_and(|c| c.is_alphanumeric() || c == '_')
            {
                continue;
            }
            let printed = m.as_str();
            if !printed.contains('.') {
                let rest = &line[end..];
                if !(UNIT_AFTER.is_match(rest) || RANGE_AFTER.is_match(rest)) {
                    continue;
                }
            }
            let Ok(value) = printed.parse::<f64>() else {
                continue;
            };
            let sources = sources_for(printed, summaries);
            let status = if is_reference(original, start) {
                FindingStatus::Reference
            } else if sources.is_empty() {
                FindingStatus::Unverified
            } else {
                FindingStatus::Accepted
            };
            out.push(Finding {
                line: i + 1,
                printed: printed.to_string(),
                value,
                pollutant: nearest(&pollutants, start, end),
                span: nearest(&dates, start, end).or(sticky_span),
                status,
                sources,
            });
        }
        if let Some(last) = dates.last() {
            sticky_span = Some(last.value);
        }
    }
    out
}

pub fn findings_csv(findings: &[Finding]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["line", "value", "pollutant", "start_date", "end_date", "status", "sources"])?;
    for f in findings {
        let sources: Vec<String> = f.sources.iter().map(|s| s.to_string()).collect();
        w.write_record([
            f.line.to_string(),
            f.printed.clone(),
            f.pollutant.map(|p| p.label().to_string()).unwrap_or_default(),
            f.span.map(|s| s.first.to_string()).unwrap_or_default(),
            f.span.map(|s| s.last.to_string()).unwrap_or_default(),
            f.status.as_str().to_string(),
            sources.join(" "),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExceedanceKind {
    DailyAverage,
    Peak,
}

/// A reported level above the WHO 24-hour guideline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub chunk: usize,
    pub span: DateSpan,
    pub pollutant: Pollutant,
    pub kind: ExceedanceKind,
    pub level: f64,
    pub guideline: f64,
}

impl Exceedance {
    pub fn ratio(&self) -> f64 {
        self.level / self.guideline
    }
}

/// Guideline exceedances in the summaries, first report wins when chunks overlap.
pub fn who_exceedances(summaries: &[WorkerSummary]) -> Vec<Exceedance> {
    let mut out: Vec<Exceedance> = Vec::new();
    let mut push = |e: Exceedance| {
        let seen = out.iter().any(|o| {
            o.kind == e.kind && o.span == e.span && o.pollutant == e.pollutant && o.level == e.level
        });
        if !seen {
            out.push(e);
        }
    };
    for s in summaries {
        for d in &s.daily_averages {
            for (p, level) in [(Pollutant::Pm25, d.pm25_avg), (Pollutant::Pm10, d.pm10_avg)] {
                let guideline = who_24h_guideline(p).expect("particulate");
                if level > guideline {
                    push(Exceedance {
                        chunk: s.chunk,
                        span: DateSpan::new(d.date, d.date),
                        pollutant: p,
                        kind: ExceedanceKind::DailyAverage,
                        level,
                        guideline,
                    });
                }
            }
        }
        for e in &s.outlier_events {
            for (p, level) in &e.peaks {
                let Some(guideline) = who_24h_guideline(*p) else { continue };
                if *level > guideline {
                    push(Exceedance {
                        chunk: s.chunk,
                        span: DateSpan::new(e.start_date, e.end_date),
                        pollutant: *p,
                        kind: ExceedanceKind::Peak,
                        level: *level,
                        guideline,
                    });
                }
            }
        }
    }
    out
}

pub fn exceedances_csv(rows: &[Exceedance]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["chunk", "start_date", "end_date", "pollutant", "kind", "level", "guideline", "ratio"])?;
    for e in rows {
        w.write_record([
            e.chunk.to_string(),
            e.span.first.to_string(),
            e.span.last.to_string(),
            e.pollutant.label().to_string(),
            match e.kind {
                ExceedanceKind::DailyAverage => "daily-average".to_string(),
                ExceedanceKind::Peak => "peak".to_string(),
            },
            e.level.to_string(),
            e.guideline.to_string(),
            format!("{:.2}", e.ratio()),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}
