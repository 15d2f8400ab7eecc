use std::fs;
use std::path::Path;
use std::sync::Arc;

use airlens::airdata::{
    load_fixture, save_fixture, synthetic, GeoPoint, HistoryClient, Pollutant, Provenance,
};
use airlens::cost::UsageLedger;
use airlens::eval::{boxplot_csv, boxplot_rows, read_scores_csv};
use airlens::orchestrator::mock::reference_script;
use chrono::{DateTime, Duration, DurationRound, Utc};

use crate::error::CliError;
use crate::{FetchArgs, PlotdataArgs, SynthArgs};

pub async fn fetch(args: FetchArgs, clock: DateTime<Utc>, clock_fixed: bool) -> Result<(), CliError> {
    let location = GeoPoint::new(args.lat, args.lng)?;
    let ledger = Arc::new(UsageLedger::new());
    let mut client = HistoryClient::from_env(ledger.clone())?;
    let end = match args.end {
        Some(end) => Some(end),
        None if clock_fixed => Some(
            clock
                .duration_trunc(Duration::days(1))
                .map_err(|e| CliError::Usage(format!("--clock: {e}")))?,
        ),
        None => None,
    };
    if let Some(end) = end {
        client = client.with_window_end(end);
    }
    let history = client.fetch_history(location, args.hours).await?;
    save_fixture(&history, &args.out, clock, Provenance::Live)?;
    println!(
        "wrote {} records ({} missing hours) to {} using {} data API call(s)",
        history.hours(),
        history.missing_hours().len(),
        args.out.display(),
        ledger.snapshot().data_api_calls
    );
    Ok(())
}

pub fn synth(args: SynthArgs, seed: u64, clock: Option<DateTime<Utc>>) -> Result<(), CliError> {
    let location = GeoPoint::new(args.lat, args.lng)?;
    if args.hours == 0 {
        return Err(CliError::Usage("--hours must be positive".into()));
    }
    let history = synthetic::wildfire_history(location, args.start, args.hours, seed);
    let retrieved = clock.unwrap_or(args.start + Duration::hours(args.hours as i64));
    save_fixture(&history, &args.out, retrieved, Provenance::Synthetic)?;
    println!("wrote {} synthetic records to {}", history.hours(), args.out.display());
    if let Some(path) = &args.script {
        let script = reference_script(&history)?;
        let text = serde_json::to_string_pretty(&script)
            .map_err(|e| CliError::Data(format!("script: {e}")))?;
        write(path, &(text + "\n"))?;
        println!("wrote {} script entries to {}", script.len(), path.display());
    }
    Ok(())
}

pub fn write(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

fn timeseries_csv(fixture: &Path) -> Result<String, CliError> {
    let history = load_fixture(fixture)?;
    let mut out = String::from("timestamp,pm25,pm10\n");
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in history.records() {
        out.push_str(&format!(
            "{},{},{}\n",
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            cell(r.value(Pollutant::Pm25)),
            cell(r.value(Pollutant::Pm10))
        ));
    }
    Ok(out)
}

pub fn plotdata(args: PlotdataArgs) -> Result<(), CliError> {
    let inputs: Vec<&Path> = [args.fixture.as_deref(), args.scores.as_deref()]
        .into_iter()
        .flatten()
        .collect();
    if inputs.is_empty() {
        return Err(CliError::Usage("give --fixture and/or --scores".into()));
    }
    let missing: Vec<String> = inputs
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!("missing input(s): {}", missing.join(", "))));
    }
    if let Some(fixture) = &args.fixture {
        let path = args.out.join("timeseries.csv");
        let body = timeseries_csv(fixture)?;
        write(&path, &body)?;
        println!("wrote {} rows to {}", body.lines().count() - 1, path.display());
    }
    if let Some(scores) = &args.scores {
        let text = fs::read_to_string(scores).map_err(|e| CliError::io(scores, e))?;
        let records = if text.trim().is_empty() {
            Vec::new()
        } else {
            read_scores_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", scores.display())))?
        };
        let path = args.out.join("boxplot.csv");
        let rows = boxplot_rows(&records)?;
        write(&path, &boxplot_csv(&rows)?)?;
        println!("wrote {} group(s) to {}", rows.len(), path.display());
    }
    Ok(())
}
