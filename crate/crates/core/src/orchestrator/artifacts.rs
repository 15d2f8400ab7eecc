use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::findings::{exceedances_csv, findings_csv};
use super::pipeline::RunResult;
use crate::cost::CostReport;
use crate::gateway::TranscriptLog;
use crate::stats::chunk_stats_csv;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("encoding {file}: {message}")]
    Encode { file: String, message: String },
}

struct Writer<'a> {
    root: &'a Path,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn text(&mut self, rel: &str, body: &str) -> Result<(), ArtifactError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ArtifactError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, body).map_err(|source| ArtifactError::Io {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), ArtifactError> {
        let body = serde_json::to_string_pretty(value).map_err(|e| ArtifactError::Encode {
            file: rel.to_string(),
            message: e.to_string(),
        })? + "\n";
        self.text(rel, &body)
    }
}

fn encode<E: std::fmt::Display>(file: &str) -> impl FnOnce(E) -> ArtifactError + '_ {
    move |e| ArtifactError::Encode {
        file: file.to_string(),
        message: e.to_string(),
    }
}

/// Writes the run directory and returns the files written, in order.
pub fn write_artifacts(
    dir: &Path,
    run: &RunResult,
    transcript: &TranscriptLog,
    cost: Option<&CostReport>,
) -> Result<Vec<PathBuf>, ArtifactError> {
    let mut w = Writer {
        root: dir,
        written: Vec::new(),
    };
    w.json("task.json", &run.task)?;
    w.json("plan.json", &run.plan)?;
    w.json(
        "call.json",
        &serde_json::json!({"call": run.call, "hours_fetched": run.hours_fetched}),
    )?;
    for o in &run.outcomes {
        w.json(&format!("summaries/chunk-{:02}.json", o.index), o)?;
    }
    w.text("report.md", &format!("{}\n", run.report.narrative.trim_end()))?;
    w.json("report.json", &run.report)?;
    w.text(
        "findings.csv",
        &findings_csv(&run.report.findings).map_err(encode("findings.csv"))?,
    )?;
    if !run.report.exceedances.is_empty() {
        w.text(
            "exceedances.csv",
            &exceedances_csv(&run.report.exceedances).map_err(encode("exceedances.csv"))?,
        )?;
    }
    if let Some(h) = &run.health {
        w.json("health.json", h)?;
    }
    if let Some(n) = &run.numerical {
        w.text(
            "chunk_stats_oracle.csv",
            &chunk_stats_csv(&n.oracle).map_err(encode("chunk_stats_oracle.csv"))?,
        )?;
        w.text(
            "chunk_stats_reported.csv",
            &chunk_stats_csv(&n.reported).map_err(encode("chunk_stats_reported.csv"))?,
        )?;
        if let Some(scores) = &n.scores {
            w.text(
                "error_scores.csv",
                &scores.to_csv().map_err(encode("error_scores.csv"))?,
            )?;
        }
    }
    w.text("transcripts.jsonl", &transcript.to_jsonl())?;
    if let Some(c) = cost {
        w.text("cost.csv", &c.to_csv())?;
    }
    Ok(w.written)
}
