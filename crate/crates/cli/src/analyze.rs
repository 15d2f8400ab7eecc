use std::sync::Arc;

use airlens::airdata::{load_fixture, GeoPoint, HistoryClient, PopulationClass};
use airlens::chunking::ChunkMode;
use airlens::codeexec::{Executor, LlmChecker, Registry, SafetyGate};
use airlens::cost::{run_cost, DataApiQuota, OverageMode, PricingTable, UsageLedger};
use airlens::gateway::{ChatProvider, Gateway, OpenAiCompatible, ScriptedProvider, Vendor};
use airlens::orchestrator::mock::reference_script;
use airlens::orchestrator::{write_artifacts, AnalysisTask, Models, Orchestrator, TaskKind};

use crate::error::CliError;
use crate::{AnalyzeArgs, TaskArg};

const DEFAULT_PROMPT: &str = "Analyze the PM2.5 and PM10 levels at this location over the period.";

fn task_kind(args: &AnalyzeArgs) -> Result<TaskKind, CliError> {
    Ok(match args.task {
        TaskArg::Trend => TaskKind::TrendAnalysis,
        TaskArg::Policy => TaskKind::PolicyReport,
        TaskArg::NumericalSummary => TaskKind::NumericalSummary,
        TaskArg::Health => {
            let date = args
                .date
                .ok_or_else(|| CliError::Usage("--task health needs --date".into()))?;
            let class: PopulationClass = args
                .class
                .as_deref()
                .ok_or_else(|| CliError::Usage("--task health needs --class".into()))?
                .parse()
                .map_err(|e| CliError::Usage(format!("--class: {e}")))?;
            TaskKind::HealthRecommendation { date, class }
        }
    })
}

pub async fn run(args: AnalyzeArgs, seed: u64) -> Result<(), CliError> {
    let kind = task_kind(&args)?;
    if args.fixture.is_none() && !args.live {
        return Err(CliError::Usage("give --fixture, or --live for live data".into()));
    }
    let history = args.fixture.as_deref().map(load_fixture).transpose()?;
    let ledger = Arc::new(UsageLedger::new());

    let provider: Arc<dyn ChatProvider> = if args.live {
        Arc::new(OpenAiCompatible::from_env(Vendor::for_model(&args.instructor_model))?)
    } else {
        let mut p = match (&args.script, &history) {
            (Some(path), _) => ScriptedProvider::load(path)?,
            (None, Some(h)) => ScriptedProvider::new(reference_script(h)?)?,
            (None, None) => unreachable!("fixture checked above"),
        };
        if args.jitter_ms > 0 {
            p = p.with_jitter(seed, args.jitter_ms);
        }
        Arc::new(p)
    };
    let mut gateway = Gateway::new(provider, ledger.clone()).with_concurrency(args.concurrency);
    if !args.live {
        gateway = gateway.with_frozen_clock();
    }
    let gateway = Arc::new(gateway);

    let client = match &history {
        Some(h) => HistoryClient::from_fixture(h.clone(), ledger.clone()),
        None => HistoryClient::from_env(ledger.clone())?,
    };
    let executor = Executor::with_air_data(Registry::default(), Arc::new(client));
    let mut gate = SafetyGate::rules_only();
    if args.live {
        gate = gate.with_checker(Arc::new(LlmChecker::new(Some(gateway.clone()), args.coder_model.clone())));
    }
    let models = Models {
        instructor: args.instructor_model.clone(),
        worker: args.worker_model.clone(),
        coder: args.coder_model.clone(),
    };
    let mut orch = Orchestrator::new(gateway.clone()).with_models(models).with_gate(gate);
    if args.lenient {
        orch = orch.with_chunk_mode(ChunkMode::Lenient);
    }

    let location = match (args.lat, args.lng, &history) {
        (Some(lat), Some(lng), _) => GeoPoint::new(lat, lng)?,
        (_, _, Some(h)) => h.location(),
        _ => return Err(CliError::Usage("live runs without a fixture need --lat and --lng".into())),
    };
    let hours = match (args.hours, &history) {
        (Some(h), _) => h as usize,
        (None, Some(h)) => h.span_hours(),
        (None, None) => 720,
    };
    let mut task = AnalysisTask::new(
        args.prompt.as_deref().unwrap_or(DEFAULT_PROMPT),
        location,
        hours,
        kind,
    );
    if args.refined {
        task = task.with_refinement(orch.library().preset(&args.preset)?.system.clone());
    }

    let result = orch.run(&task, &executor).await?;
    let table = match &args.pricing {
        Some(path) => PricingTable::load(path)?,
        None => PricingTable::default(),
    };
    let cost = match run_cost(&ledger.snapshot(), &table, &DataApiQuota::default(), OverageMode::Linear) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("cost report skipped: {e}");
            None
        }
    };
    let files = write_artifacts(&args.out, &result, gateway.transcript(), cost.as_ref())?;

    let ok = result.outcomes.iter().filter(|o| o.summary().is_some()).count();
    println!(
        "{}: {} of {} chunks summarized, {} finding(s), {} file(s) in {}",
        task.kind.name(),
        ok,
        result.outcomes.len(),
        result.report.findings.len(),
        files.len(),
        args.out.display()
    );
    if let Some(h) = &result.health {
        println!("{}", h.text);
    }
    if let Some(scores) = result.numerical.as_ref().and_then(|n| n.scores.as_ref()) {
        for r in &scores.rows {
            println!("{:<10} mae {:.4} rmse {:.4}", r.metric.label(), r.mae, r.rmse);
        }
    }
    Ok(())
}
