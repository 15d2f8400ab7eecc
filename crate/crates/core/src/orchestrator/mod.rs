//! Instructor-Worker pipeline: plan, retrieve, summarize per chunk, aggregate.

mod artifacts;
mod findings;
pub mod mock;
mod pipeline;
mod prompts;
mod summary;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use artifacts::{write_artifacts, ArtifactError};
pub use findings::{
    exceedances_csv, extract_findings, findings_csv, matches_printed, who_24h_guideline,
    who_exceedances, Exceedance, ExceedanceKind, Finding, FindingStatus, WHO_24H_PM10,
    WHO_24H_PM25,
};
pub use pipeline::{
    AggregateReport, ChunkOutcome, ChunkStatus, HealthRecommendation, NumericalScores, Orchestrator,
    Plan, RunResult, WorkerInstruction,
};
pub use prompts::{render, PromptLibrary, SchemaId};
pub use summary::{
    parse_worker_summary, parse_worker_summary_in, DateSpan, ReportedOutlier, SummaryError,
    WorkerSummary,
};

use crate::airdata::{GeoPoint, PopulationClass};
use crate::chunking::ChunkError;
use crate::codeexec::CodeExecError;
use crate::gateway::GatewayError;
use crate::stats::StatsError;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("prompt library: {0}")]
    Prompt(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("date {0} is not covered by any summarized chunk")]
    Coverage(NaiveDate),
    #[error("aggregation failed: {0}")]
    Aggregation(String),
    #[error(transparent)]
    CodeExec(#[from] CodeExecError),
    #[error(transparent)]
    Chunking(#[from] ChunkError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskKind {
    TrendAnalysis,
    HealthRecommendation { date: NaiveDate, class: PopulationClass },
    PolicyReport,
    NumericalSummary,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::TrendAnalysis => "trend-analysis",
            TaskKind::HealthRecommendation { .. } => "health-recommendation",
            TaskKind::PolicyReport => "policy-report",
            TaskKind::NumericalSummary => "numerical-summary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisTask {
    pub user_prompt: String,
    pub location: GeoPoint,
    pub hours: usize,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<String>,
}

impl AnalysisTask {
    pub fn new(user_prompt: impl Into<String>, location: GeoPoint, hours: usize, kind: TaskKind) -> Self {
        Self {
            user_prompt: user_prompt.into(),
            location,
            hours,
            kind,
            refinement: None,
        }
    }

    pub fn with_refinement(mut self, context: impl Into<String>) -> Self {
        self.refinement = Some(context.into());
        self
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.user_prompt.trim().is_empty() {
            return Err(OrchestratorError::Precondition("user prompt is empty".into()));
        }
        if self.hours == 0 {
            return Err(OrchestratorError::Precondition("hours must be positive".into()));
        }
        if self.refinement.as_deref().is_some_and(|r| r.trim().is_empty()) {
            return Err(OrchestratorError::Precondition("refinement context is empty".into()));
        }
        Ok(())
    }
}

/// Model names per role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Models {
    pub instructor: String,
    pub worker: String,
    pub coder: String,
}

impl Default for Models {
    fn default() -> Self {
        Self {
            instructor: "gpt-4.1".into(),
            worker: "gpt-4.1".into(),
            coder: "gpt-4.1".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_validation() {
        let at = GeoPoint::new(34.0725, -118.5445).unwrap();
        assert!(AnalysisTask::new("trends", at, 720, TaskKind::TrendAnalysis).validate().is_ok());
        assert!(matches!(
            AnalysisTask::new("  ", at, 720, TaskKind::TrendAnalysis).validate(),
            Err(OrchestratorError::Precondition(_))
        ));
        assert!(AnalysisTask::new("x", at, 0, TaskKind::PolicyReport).validate().is_err());
        assert!(AnalysisTask::new("x", at, 720, TaskKind::PolicyReport)
            .with_refinement("")
            .validate()
            .is_err());
    }

    #[test]
    fn task_json_shape() {
        let at = GeoPoint::new(34.0725, -118.5445).unwrap();
        let task = AnalysisTask::new(
            "advice",
            at,
            720,
            TaskKind::HealthRecommendation {
                date: "2025-01-10".parse().unwrap(),
                class: PopulationClass::LungDisease,
            },
        );
        let v = serde_json::to_value(&task).unwrap();
        assert_eq!(v["kind"]["kind"], "health-recommendation");
        assert_eq!(v["kind"]["class"], "lung-disease");
        let back: AnalysisTask = serde_json::from_value(v).unwrap();
        assert_eq!(back, task);
    }
}
