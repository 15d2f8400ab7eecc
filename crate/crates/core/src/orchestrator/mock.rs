//! Reference replay script: faithful scripted models for offline runs.
//!
//! Workers answer with the exact statistics of their chunk (rounded to two
//! decimals); instructor narratives cite only numbers present in those
//! summaries.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::summary::{parse_worker_summary, WorkerSummary};
use super::findings::who_24h_guideline;
use super::OrchestratorError;
use crate::airdata::{AirQualityHistory, PopulationClass, Pollutant};
use crate::chunking::{chunk_history_with, Chunk, ChunkMode};
use crate::gateway::{Contains, ScriptEntry, ScriptMatch};
use crate::stats::{chunk_stats, daily_averages, iqr_outlier_hours};

fn r2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn entry(all: &[&str], response: String) -> ScriptEntry {
    ScriptEntry {
        matcher: ScriptMatch {
            model: None,
            contains: Some(Contains::All(all.iter().map(|s| s.to_string()).collect())),
        },
        response: Some(response),
        ..Default::default()
    }
}

fn long_date(d: NaiveDate) -> String {
    d.format("%B %-d, %Y").to_string()
}

fn short_date(d: NaiveDate) -> String {
    d.format("%m/%d").to_string()
}

fn chunk_key(chunk: &Chunk<'_>) -> String {
    format!("CHUNK {:02} TARGET", chunk.index())
}

/// Summary-schema reply for one chunk, or `None` when the chunk has gaps.
pub fn summary_reply(chunk: &Chunk<'_>) -> Option<String> {
    let daily = daily_averages(chunk).ok()?;
    let mut events = Vec::new();
    for p in [Pollutant::Pm25, Pollutant::Pm10] {
        events.extend(iqr_outlier_hours(chunk.records(), p).ok()?.events);
    }
    events.sort_by(|a, b| (a.start_date, a.pollutant.label()).cmp(&(b.start_date, b.pollutant.label())));
    let body = serde_json::json!({
        "daily_averages": daily.iter().map(|d| serde_json::json!({
            "date": d.date, "pm25_avg": r2(d.pm25_avg), "pm10_avg": r2(d.pm10_avg)
        })).collect::<Vec<_>>(),
        "outlier_events": events.iter().map(|e| serde_json::json!({
            "start_date": e.start_date, "end_date": e.end_date,
            "pollutant": e.pollutant.label(), "max_level": r2(e.max_level)
        })).collect::<Vec<_>>(),
    });
    Some(format!("```json\n{body}\n```"))
}

/// Stats-schema reply for one chunk, or `None` when the chunk has gaps.
pub fn stats_reply(chunk: &Chunk<'_>) -> Option<String> {
    let s = chunk_stats(chunk).ok()?;
    let body = serde_json::json!({"chunk_stats": {
        "pm25_mean": r2(s.pm25_mean), "pm25_std": r2(s.pm25_std),
        "pm10_mean": r2(s.pm10_mean), "pm10_std": r2(s.pm10_std),
    }});
    Some(format!("```json\n{body}\n```"))
}

struct Peak {
    start: NaiveDate,
    end: NaiveDate,
    pollutant: Pollutant,
    level: f64,
}

fn peaks(summaries: &[WorkerSummary]) -> Vec<Peak> {
    let mut out: Vec<Peak> = Vec::new();
    for s in summaries {
        for e in &s.outlier_events {
            for (p, level) in &e.peaks {
                let dup = out.iter().any(|o| o.start == e.start_date && o.pollutant == *p && o.level == *level);
                if !dup {
                    out.push(Peak { start: e.start_date, end: e.end_date, pollutant: *p, level: *level });
                }
            }
        }
    }
    out.sort_by(|a, b| b.level.total_cmp(&a.level).then(a.start.cmp(&b.start)));
    out
}

/// Daily averages keyed by date, first report wins.
fn daily_table(summaries: &[WorkerSummary]) -> BTreeMap<NaiveDate, (f64, f64)> {
    let mut out = BTreeMap::new();
    for s in summaries {
        for d in &s.daily_averages {
            out.entry(d.date).or_insert((d.pm25_avg, d.pm10_avg));
        }
    }
    out
}

fn trend_narrative(summaries: &[WorkerSummary]) -> String {
    let mut out = String::from("Key Pollutant Spike Events\n\n**1. Highest reported peaks**\n\n");
    let top = peaks(summaries);
    if top.is_empty() {
        out.push_str("- No outlier events were reported.\n");
    }
    for p in top.iter().take(4) {
        let when = if p.start == p.end {
            long_date(p.start)
        } else {
            format!("{} to {}", long_date(p.start), long_date(p.end))
        };
        out.push_str(&format!(
            "- **{when}**:\n  - **{}**: Peaked at **{:.2}**.\n",
            p.pollutant.label(),
            p.level
        ));
    }
    out.push_str("\n**2. Days above the WHO 24-hour guideline**\n\n");
    let high: Vec<_> = daily_table(summaries)
        .into_iter()
        .filter(|(_, (pm25, _))| *pm25 > who_24h_guideline(Pollutant::Pm25).expect("pm25"))
        .collect();
    if high.is_empty() {
        out.push_str("- None.\n");
    }
    for (date, (pm25, pm10)) in high.iter().take(6) {
        out.push_str(&format!(
            "- **{}**: PM2.5 avg **{pm25:.2}**, PM10 avg **{pm10:.2}**.\n",
            long_date(*date)
        ));
    }
    out
}

fn policy_narrative(summaries: &[WorkerSummary]) -> String {
    let daily = daily_table(summaries);
    let top = peaks(summaries);
    let mut out = String::from("**1. Severe Pollution Episodes**: ");
    match top.as_slice() {
        [] => out.push_str("no outlier events were reported.\n"),
        [only] => out.push_str(&format!(
            "one reported spike.\n   - Example: Peak of {:.0} µg/m³ on {} (WHO 24-hour PM2.5 limit: 15 µg/m³).\n",
            only.level,
            short_date(only.start)
        )),
        [a, b, ..] => {
            let (lo, hi) = (b.level.min(a.level), a.level.max(b.level));
            let (d1, d2) = (a.start.min(b.start), a.start.max(b.start));
            out.push_str(&format!(
                "particulate spikes far above WHO guidelines.\n   - Example: Peaks of {lo:.0}–{hi:.0} µg/m³ on {}–{} (WHO 24-hour PM2.5 limit: 15 µg/m³).\n",
                short_date(d1),
                short_date(d2)
            ));
        }
    }
    let above: Vec<_> = daily.iter().filter(|(_, (pm25, _))| *pm25 > 15.0).collect();
    out.push_str(&format!(
        "\n**2. Prolonged Exposure**: daily PM2.5 averages exceeded the guideline on {} of {} days.\n",
        above.len(),
        daily.len()
    ));
    if let Some((date, (pm25, _))) = above.last() {
        out.push_str(&format!("   - Example: PM2.5 averaged {pm25:.2} µg/m³ on {}.\n", short_date(**date)));
    }
    let events: usize = summaries.iter().map(|s| s.outlier_events.len()).sum();
    out.push_str(&format!(
        "\n**3. Recurring Outliers**: {events} outlier event reports across the period.\n"
    ));
    out.push_str(
        "\n**4. Policy Recommendations**:\n   - Issue public alerts when PM2.5 exceeds the WHO 24-hour limit.\n   - Provide clean-air shelters and filtration for sensitive groups.\n   - Expand monitoring near active fire zones.\n",
    );
    out
}

fn health_text(date: NaiveDate, class: PopulationClass, daily: Option<(f64, f64)>, refined: bool) -> String {
    let who = who_24h_guideline(Pollutant::Pm25).expect("pm25");
    let (level, advice) = match daily {
        Some((pm25, _)) if pm25 > 4.0 * who => ("unhealthy", "avoid all outdoor activity and keep windows closed"),
        Some((pm25, _)) if pm25 > who => ("moderate", "limit prolonged or strenuous outdoor activity"),
        Some(_) => ("good", "normal outdoor activity is fine"),
        None => ("unknown", "follow local advisories"),
    };
    let mut text = format!(
        "Air quality on {} is {level} for {}: {advice}.",
        long_date(date),
        class.audience()
    );
    if let Some((pm25, pm10)) = daily {
        text.push_str(&format!(" Daily PM2.5 averaged {pm25:.2} µg/m³ and PM10 {pm10:.2} µg/m³."));
    }
    if refined {
        text.push_str(" Wildfire smoke is the main source; follow evacuation orders and fire department guidance.");
    }
    text
}

/// Builds the reference script for `history` (whole days, any length).
pub fn reference_script(history: &AirQualityHistory) -> Result<Vec<ScriptEntry>, OrchestratorError> {
    let chunks = chunk_history_with(history, ChunkMode::Lenient)?;
    let location = history.location();
    let mut script = vec![
        entry(&["Choose the functions"], "fetch_history".into()),
        entry(
            &["Instructor of a team", "Task kind: numerical-summary"],
            "SCHEMA: stats-v1\n1. Data extraction\n2. Outlier detection\n3. Summarization: 48-hour mean and standard deviation of PM2.5 and PM10\n4. Output".into(),
        ),
        entry(
            &["Instructor of a team"],
            "SCHEMA: summary-v1\n1. Data extraction\n2. Outlier detection\n3. Summarization\n4. Output".into(),
        ),
        entry(
            &["Location: latitude"],
            format!(
                "fetch_history(lat={}, lng={}, hours={})",
                location.latitude(),
                location.longitude(),
                history.span_hours()
            ),
        ),
    ];
    let mut summaries = Vec::new();
    for c in &chunks {
        let key = chunk_key(c);
        if let Some(reply) = stats_reply(c) {
            script.push(entry(&[&key, "\"chunk_stats\""], reply));
        }
        if let Some(reply) = summary_reply(c) {
            summaries.push(parse_worker_summary(&reply, c).map_err(|e| {
                OrchestratorError::Aggregation(format!("reference reply for chunk {}: {e}", c.index()))
            })?);
            script.push(entry(&[&key], reply));
        }
    }
    script.push(entry(&["one per target day"], trend_narrative(&summaries)));
    script.push(entry(&["policy recommendations"], policy_narrative(&summaries)));
    let daily = daily_table(&summaries);
    for c in &chunks {
        let date = c.target_day();
        for class in PopulationClass::ALL {
            let key = format!("write a health recommendation for {} on {}.", class.audience(), long_date(date));
            let today = daily.get(&date).copied();
            script.push(entry(&[&key, "Fire Department"], health_text(date, class, today, true)));
            script.push(entry(&[&key], health_text(date, class, today, false)));
        }
    }
    Ok(script)
}
