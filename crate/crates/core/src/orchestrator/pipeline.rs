use std::sync::Arc;

use chrono::NaiveDate;
use futures::future::join_all;
use serde::{Deserialize, Serialize};

use super::findings::{extract_findings, who_exceedances, Exceedance, Finding};
use super::prompts::{render, PromptLibrary, SchemaId};
use super::summary::{parse_worker_summary, SummaryError, WorkerSummary};
use super::{AnalysisTask, Models, OrchestratorError, TaskKind};
use crate::airdata::PopulationClass;
use crate::chunking::{chunk_history_with, Chunk, ChunkMode};
use crate::codeexec::{
    request_call, select_functions, CallOutput, CodeExecError, Executor, Registry, SafetyGate,
};
use crate::gateway::{ChatRequest, Gateway, Message};
use crate::stats::{chunk_stats, score_worker_numbers, ChunkStats, WorkerScores};

type Result<T> = std::result::Result<T, OrchestratorError>;

/// Worker instruction, normalized to the library's four steps for a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerInstruction {
    pub schema: SchemaId,
    pub steps: Vec<String>,
}

impl WorkerInstruction {
    pub fn for_schema(library: &PromptLibrary, schema: SchemaId) -> Self {
        Self {
            schema,
            steps: library.schema(schema).steps.clone(),
        }
    }

    pub fn system_prompt(&self, library: &PromptLibrary) -> Result<String> {
        render(
            &library.worker.system,
            &[
                ("STEPS", &self.steps.join("\n")),
                ("SCHEMA", library.schema(self.schema).format.trim()),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub functions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_functions: Vec<String>,
    pub instruction: WorkerInstruction,
    pub planner_reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ChunkStatus {
    Ok { summary: WorkerSummary },
    Failed { error: String, raw: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkOutcome {
    pub index: usize,
    pub target_day: NaiveDate,
    pub attempts: u32,
    #[serde(flatten)]
    pub status: ChunkStatus,
}

impl ChunkOutcome {
    pub fn summary(&self) -> Option<&WorkerSummary> {
        match &self.status {
            ChunkStatus::Ok { summary } => Some(summary),
            ChunkStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub task: String,
    pub narrative: String,
    pub findings: Vec<Finding>,
    /// Chunks whose summaries were handed to the instructor.
    pub provenance: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_chunks: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exceedances: Vec<Exceedance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthRecommendation {
    pub date: NaiveDate,
    pub class: PopulationClass,
    pub refined: bool,
    pub text: String,
    pub provenance: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericalScores {
    pub oracle: Vec<ChunkStats>,
    pub reported: Vec<ChunkStats>,
    pub scores: Option<WorkerScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: AnalysisTask,
    pub plan: Plan,
    pub call: String,
    pub hours_fetched: usize,
    pub outcomes: Vec<ChunkOutcome>,
    pub report: AggregateReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health: Option<HealthRecommendation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerical: Option<NumericalScores>,
}

fn successful(outcomes: &[ChunkOutcome]) -> Vec<&WorkerSummary> {
    outcomes.iter().filter_map(ChunkOutcome::summary).collect()
}

fn context_block(summaries: &[&WorkerSummary]) -> String {
    summaries
        .iter()
        .map(|s| format!("Chunk {:02} ({}): {}", s.chunk, s.span, s.to_context_json()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn long_date(date: NaiveDate) -> String {
    date.format("%B %-d, %Y").to_string()
}

pub struct Orchestrator {
    gateway: Arc<Gateway>,
    registry: Registry,
    library: PromptLibrary,
    models: Models,
    gate: SafetyGate,
    chunk_mode: ChunkMode,
}

impl Orchestrator {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            registry: Registry::default(),
            library: PromptLibrary::default(),
            models: Models::default(),
            gate: SafetyGate::rules_only(),
            chunk_mode: ChunkMode::Strict,
        }
    }

    pub fn with_registry(mut self, registry: Registry) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_library(mut self, library: PromptLibrary) -> Self {
        self.library = library;
        self
    }

    pub fn with_models(mut self, models: Models) -> Self {
        self.models = models;
        self
    }

    pub fn with_gate(mut self, gate: SafetyGate) -> Self {
        self.gate = gate;
        self
    }

    pub fn with_chunk_mode(mut self, mode: ChunkMode) -> Self {
        self.chunk_mode = mode;
        self
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn library(&self) -> &PromptLibrary {
        &self.library
    }

    /// Selects functions and asks the instructor for the worker instruction.
    pub async fn plan(&self, task: &AnalysisTask) -> Result<Plan> {
        task.validate()?;
        let selection =
            select_functions(&task.user_prompt, &self.registry, &self.gateway, &self.models.instructor)
                .await?;
        let ids: Vec<&str> = SchemaId::ALL.iter().map(|s| s.as_str()).collect();
        let system = render(&self.library.planner.system, &[("SCHEMA_IDS", &ids.join(", "))])?;
        let request = ChatRequest::new(
            &self.models.instructor,
            vec![
                Message::system(system),
                Message::user(format!("{}\nTask kind: {}", task.user_prompt, task.kind.name())),
            ],
        )
        .with_label("instructor/plan");
        let reply = self.gateway.complete(&request).await?;
        let schema = SchemaId::find_in(&reply.content).ok_or_else(|| {
            OrchestratorError::Planning(format!(
                "instructor reply names no known schema ({})",
                ids.join(", ")
            ))
        })?;
        let expected = match task.kind {
            TaskKind::NumericalSummary => SchemaId::StatsV1,
            _ => SchemaId::SummaryV1,
        };
        if schema != expected {
            return Err(OrchestratorError::Planning(format!(
                "{} needs schema {expected}, instructor chose {schema}",
                task.kind.name()
            )));
        }
        Ok(Plan {
            functions: selection.specs.iter().map(|s| s.name.clone()).collect(),
            unknown_functions: selection.unknown,
            instruction: WorkerInstruction::for_schema(&self.library, schema),
            planner_reply: reply.content,
        })
    }

    fn check_schema(&self, summary: WorkerSummary, schema: SchemaId) -> std::result::Result<WorkerSummary, SummaryError> {
        if schema == SchemaId::StatsV1 && summary.chunk_stats.is_none() {
            return Err(SummaryError::Malformed("chunk_stats missing".into()));
        }
        Ok(summary)
    }

    async fn summarize_one(&self, chunk: &Chunk<'_>, instruction: &WorkerInstruction, system: &str) -> ChunkOutcome {
        let index = chunk.index();
        let outcome = |attempts, status| ChunkOutcome {
            index,
            target_day: chunk.target_day(),
            attempts,
            status,
        };
        let user = match render(
            &self.library.worker.user,
            &[("CHUNK_DATA", &chunk.to_prompt_table(false))],
        ) {
            Ok(u) => u,
            Err(e) => return outcome(0, ChunkStatus::Failed { error: e.to_string(), raw: String::new() }),
        };
        let mut messages = vec![Message::system(system), Message::user(user)];
        let first = ChatRequest::new(&self.models.worker, messages.clone()).with_label(format!("worker/{index:02}"));
        let raw = match self.gateway.complete(&first).await {
            Ok(r) => r.content,
            Err(e) => return outcome(1, ChunkStatus::Failed { error: e.to_string(), raw: String::new() }),
        };
        let error = match parse_worker_summary(&raw, chunk).and_then(|s| self.check_schema(s, instruction.schema)) {
            Ok(summary) => return outcome(1, ChunkStatus::Ok { summary }),
            Err(e) => e,
        };
        log::warn!("worker {index:02}: {error}; re-prompting");
        let retry = match render(&self.library.worker.retry, &[("ERROR", &error.to_string())]) {
            Ok(r) => r,
            Err(e) => return outcome(1, ChunkStatus::Failed { error: e.to_string(), raw }),
        };
        messages.push(Message::assistant(raw.clone()));
        messages.push(Message::user(retry));
        let second =
            ChatRequest::new(&self.models.worker, messages).with_label(format!("worker/{index:02}/retry"));
        match self.gateway.complete(&second).await {
            Ok(r) => match parse_worker_summary(&r.content, chunk).and_then(|s| self.check_schema(s, instruction.schema)) {
                Ok(summary) => outcome(2, ChunkStatus::Ok { summary }),
                Err(e) => outcome(2, ChunkStatus::Failed { error: e.to_string(), raw: r.content }),
            },
            Err(e) => outcome(2, ChunkStatus::Failed { error: e.to_string(), raw }),
        }
    }

    /// One outcome per chunk, in chunk order. Failures stay per chunk.
    pub async fn summarize_chunks(
        &self,
        chunks: &[Chunk<'_>],
        instruction: &WorkerInstruction,
    ) -> Result<Vec<ChunkOutcome>> {
        if chunks.is_empty() {
            return Err(OrchestratorError::Precondition("no chunks to summarize".into()));
        }
        let system = instruction.system_prompt(&self.library)?;
        let mut outcomes =
            join_all(chunks.iter().map(|c| self.summarize_one(c, instruction, &system))).await;
        outcomes.sort_by_key(|o| o.index);
        Ok(outcomes)
    }

    fn instructor_messages(&self, task: &AnalysisTask, system: String) -> Vec<Message> {
        let mut messages = Vec::new();
        if let Some(refinement) = &task.refinement {
            messages.push(Message::system(refinement.trim()));
        }
        messages.push(Message::system(system));
        messages.push(Message::user(task.user_prompt.trim()));
        messages
    }

    async fn instruct(
        &self,
        task: &AnalysisTask,
        template: &str,
        values: &[(&str, &str)],
        label: &str,
    ) -> Result<String> {
        let system = render(template, values)?;
        let request = ChatRequest::new(&self.models.instructor, self.instructor_messages(task, system))
            .with_label(label);
        Ok(self.gateway.complete(&request).await?.content)
    }

    fn report(
        &self,
        task: &AnalysisTask,
        narrative: String,
        outcomes: &[ChunkOutcome],
        used: &[&WorkerSummary],
    ) -> AggregateReport {
        let all: Vec<WorkerSummary> = successful(outcomes).into_iter().cloned().collect();
        AggregateReport {
            task: task.kind.name().to_string(),
            findings: extract_findings(&narrative, &all),
            narrative,
            provenance: used.iter().map(|s| s.chunk).collect(),
            failed_chunks: outcomes
                .iter()
                .filter(|o| o.summary().is_none())
                .map(|o| o.index)
                .collect(),
            exceedances: Vec::new(),
        }
    }

    /// Instructor narrative over all successful summaries.
    pub async fn aggregate(&self, outcomes: &[ChunkOutcome], task: &AnalysisTask) -> Result<AggregateReport> {
        let used = successful(outcomes);
        if used.is_empty() {
            return Err(OrchestratorError::Aggregation("every chunk failed".into()));
        }
        let narrative = self
            .instruct(
                task,
                &self.library.instructor.trend,
                &[("CONTEXT", &context_block(&used))],
                "instructor/aggregate",
            )
            .await?;
        Ok(self.report(task, narrative, outcomes, &used))
    }

    pub async fn recommend_health(
        &self,
        task: &AnalysisTask,
        outcomes: &[ChunkOutcome],
    ) -> Result<HealthRecommendation> {
        let TaskKind::HealthRecommendation { date, class } = task.kind else {
            return Err(OrchestratorError::Precondition(format!(
                "{} task has no date and population class",
                task.kind.name()
            )));
        };
        let all = successful(outcomes);
        if all.is_empty() {
            return Err(OrchestratorError::Aggregation("every chunk failed".into()));
        }
        let used: Vec<&WorkerSummary> = all.into_iter().filter(|s| s.span.contains(date)).collect();
        if used.is_empty() {
            return Err(OrchestratorError::Coverage(date));
        }
        let text = self
            .instruct(
                task,
                &self.library.instructor.health,
                &[
                    ("CLASS", class.audience()),
                    ("DATE", &long_date(date)),
                    ("CONTEXT", &context_block(&used)),
                ],
                "instructor/health",
            )
            .await?;
        Ok(HealthRecommendation {
            date,
            class,
            refined: task.refinement.is_some(),
            text,
            provenance: used.iter().map(|s| s.chunk).collect(),
        })
    }

    pub async fn generate_policy_report(
        &self,
        outcomes: &[ChunkOutcome],
        task: &AnalysisTask,
    ) -> Result<AggregateReport> {
        let used = successful(outcomes);
        if used.is_empty() {
            return Err(OrchestratorError::Aggregation("no successful summaries".into()));
        }
        let narrative = self
            .instruct(
                task,
                &self.library.instructor.policy,
                &[("CONTEXT", &context_block(&used))],
                "instructor/policy",
            )
            .await?;
        let mut report = self.report(task, narrative, outcomes, &used);
        let owned: Vec<WorkerSummary> = used.into_iter().cloned().collect();
        report.exceedances = who_exceedances(&owned);
        Ok(report)
    }

    fn numerical(&self, task: &AnalysisTask, chunks: &[Chunk<'_>], outcomes: &[ChunkOutcome]) -> Result<(AggregateReport, NumericalScores)> {
        let mut oracle = Vec::new();
        for c in chunks {
            match chunk_stats(c) {
                Ok(s) => oracle.push(s),
                Err(e) => log::warn!("chunk {:02} left out of scoring: {e}", c.index()),
            }
        }
        let reported: Vec<ChunkStats> = successful(outcomes).iter().filter_map(|s| s.chunk_stats).collect();
        let scores = if reported.is_empty() || oracle.is_empty() {
            None
        } else {
            match score_worker_numbers(&reported, &oracle) {
                Ok(s) => Some(s),
                Err(crate::stats::StatsError::Empty) => None,
                Err(e) => return Err(e.into()),
            }
        };
        let mut narrative = String::from("| chunk | pm25_mean | pm25_std | pm10_mean | pm10_std |\n|---|---|---|---|---|\n");
        for s in &reported {
            narrative.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                s.chunk, s.pm25_mean, s.pm25_std, s.pm10_mean, s.pm10_std
            ));
        }
        let used = successful(outcomes);
        let report = self.report(task, narrative, outcomes, &used);
        Ok((report, NumericalScores { oracle, reported, scores }))
    }

    /// Full run: plan, one checked call for the data, fan-out, aggregation.
    pub async fn run(&self, task: &AnalysisTask, executor: &Executor) -> Result<RunResult> {
        let plan = self.plan(task).await?;
        let specs: Vec<_> = plan
            .functions
            .iter()
            .filter_map(|n| self.registry.get(n).cloned())
            .collect();
        let prompt = format!(
            "{}\nLocation: latitude {}, longitude {}. Period: the last {} hours.",
            task.user_prompt.trim(),
            task.location.latitude(),
            task.location.longitude(),
            task.hours
        );
        let call = request_call(&prompt, &specs, &self.gateway, &self.models.coder).await?;
        let result = executor.run(&call, &self.gate).await?;
        let CallOutput::History(history) = result.output else {
            return Err(CodeExecError::Runtime {
                call: call.as_str().to_string(),
                message: "call returned no hourly history".into(),
            }
            .into());
        };
        if history.span_hours() != task.hours {
            log::warn!("task asked for {} hours, call fetched {}", task.hours, history.span_hours());
        }
        let chunks = chunk_history_with(&history, self.chunk_mode)?;
        let outcomes = self.summarize_chunks(&chunks, &plan.instruction).await?;
        let mut health = None;
        let mut numerical = None;
        let report = match &task.kind {
            TaskKind::TrendAnalysis => self.aggregate(&outcomes, task).await?,
            TaskKind::PolicyReport => self.generate_policy_report(&outcomes, task).await?,
            TaskKind::HealthRecommendation { .. } => {
                let rec = self.recommend_health(task, &outcomes).await?;
                let used: Vec<&WorkerSummary> = successful(&outcomes)
                    .into_iter()
                    .filter(|s| rec.provenance.contains(&s.chunk))
                    .collect();
                let report = self.report(task, rec.text.clone(), &outcomes, &used);
                health = Some(rec);
                report
            }
            TaskKind::NumericalSummary => {
                let (report, scores) = self.numerical(task, &chunks, &outcomes)?;
                numerical = Some(scores);
                report
            }
        };
        Ok(RunResult {
            task: task.clone(),
            plan,
            call: result.call.to_string(),
            hours_fetched: history.span_hours(),
            outcomes,
            report,
            health,
            numerical,
        })
    }
}
