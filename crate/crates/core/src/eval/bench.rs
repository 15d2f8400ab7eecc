use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::airdata::PopulationClass;
use crate::stats::{percentile_sorted, sorted, IQR_MULTIPLIER};

/// Five-number summary with whisker outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub outliers: Vec<f64>,
}

pub fn iteration_stats(scores: &[f64]) -> Result<IterationStats> {
    if scores.is_empty() {
        return Err(EvalError::Precondition("no scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::Precondition("scores must be finite".into()));
    }
    let s = sorted(scores);
    let q = |p: f64| percentile_sorted(&s, p).expect("non-empty");
    let (q1, q3) = (q(0.25), q(0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - IQR_MULTIPLIER * iqr, q3 + IQR_MULTIPLIER * iqr);
    Ok(IterationStats {
        n: s.len(),
        min: s[0],
        q1,
        median: q(0.5),
        q3,
        max: s[s.len() - 1],
        mean: s.iter().sum::<f64>() / s.len() as f64,
        outliers: s.iter().copied().filter(|&v| v < lo || v > hi).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub mean_normal: f64,
    pub mean_refined: f64,
    /// mean(refined) - mean(normal)
    pub mean_delta: f64,
    pub min_normal: f64,
    pub min_refined: f64,
    pub q3_normal: f64,
    pub q1_refined: f64,
    /// The normal upper quartile lies strictly below the refined lower quartile.
    pub separated: bool,
}

pub fn compare_prompt_variants(normal: &[f64], refined: &[f64]) -> Result<VariantComparison> {
    let n = iteration_stats(normal)?;
    let r = iteration_stats(refined)?;
    Ok(VariantComparison {
        mean_normal: n.mean,
        mean_refined: r.mean,
        mean_delta: r.mean - n.mean,
        min_normal: n.min,
        min_refined: r.min,
        q3_normal: n.q3,
        q1_refined: r.q1,
        separated: n.q3 < r.q1,
    })
}

/// One scored generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub iteration: u32,
    pub day: NaiveDate,
    pub population_class: PopulationClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreRecord {
    pub fn group(&self) -> String {
        format!("{}/{}", self.day, self.population_class)
    }
}

pub fn scores_csv(records: &[ScoreRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
    w.write_record(["iteration", "day", "population_class", "precision", "recall", "f1"])
        .map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<ScoreRecord>, _>>()
        .map_err(|e| EvalError::Csv(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub group: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Space-separated outlier values.
    pub outliers: String,
}

/// One row per day/class group, over F1 scores, in group order.
pub fn boxplot_rows(records: &[ScoreRecord]) -> Result<Vec<BoxplotRow>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.group()).or_default().push(r.f1);
    }
    groups
        .into_iter()
        .map(|(group, f1)| {
            let s = iteration_stats(&f1)?;
            Ok(BoxplotRow {
                group,
                min: s.min,
                q1: s.q1,
                median: s.median,
                q3: s.q3,
                max: s.max,
                outliers: s.outliers.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
            })
        })
        .collect()
}

pub fn boxplot_csv(rows: &[BoxplotRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
    w.write_record(["group", "min", "q1", "median", "q3", "max", "outliers"])
        .map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
