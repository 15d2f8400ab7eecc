//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use airlens::airdata::{
    synthetic, AirQualityHistory, GeoPoint, HistoryClient, HourlyRecord, Pollutant, Reading,
};
use airlens::chunking::{chunk_history, CHUNK_HOURS};
use airlens::codeexec::{
    format_check, CallOutput, CallString, CodeExecError, Executor, FormatError, Registry,
    RuleChecker, SafetyGate, SafetyPass, Verdict,
};
use airlens::cost::{chunk_cost, summarization_cost, CachedFraction, PricingTable, Usd};
use airlens::eval::{
    bert_precision, bert_recall, score_text, BertScore, HashEmbedder, SimilarityMatrix,
};
use airlens::orchestrator::{parse_worker_summary_in, DateSpan};
use airlens::stats::{chunk_stats, iqr_outlier_days, mae, quartiles, rmse, DailyAverage};
use chrono::{Duration as Hours, NaiveDate, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn la() -> GeoPoint {
    GeoPoint::new(34.0725, -118.5445).unwrap()
}

fn jan9() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 9, 0, 0, 0).unwrap()
}

fn chunking_exactness() -> Check {
    let started = Instant::now();
    let h = synthetic::wildfire_history(la(), jan9(), 720, 11);
    let chunks = chunk_history(&h).map_err(|e| e.to_string())?;
    ensure!(chunks.len() == 30, "{} chunks", chunks.len());
    ensure!(chunks.iter().all(|c| c.records().len() == CHUNK_HOURS), "a chunk is not 48 records");
    let (c1, c2) = (&chunks[0], &chunks[1]);
    let stamps = |c: &airlens::chunking::Chunk<'_>| c.records().iter().map(|r| r.timestamp).collect::<Vec<_>>();
    ensure!(stamps(c1) == stamps(c2), "chunk 1 and chunk 2 hold different records");
    ensure!(c1.target_day() != c2.target_day(), "chunk 1 and chunk 2 share a target day");
    let mut joined = Vec::new();
    for c in &chunks {
        joined.extend_from_slice(c.target_slice().map_err(|e| e.to_string())?);
    }
    ensure!(joined.as_slice() == h.records(), "target slices do not partition the source");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("30 chunks x 48 records, chunk 1 == chunk 2, targets partition 720 hours ({elapsed:?})"))
}

fn cost_reproduction() -> Check {
    let table = PricingTable::default();
    let gpt41 = table.get("gpt41").map_err(|e| e.to_string())?;
    let per_chunk = chunk_cost(25_000, 200, gpt41, CachedFraction::NONE);
    let want: Usd = "0.0516".parse().unwrap();
    ensure!(per_chunk == want, "per chunk {per_chunk}");
    ensure!(per_chunk.format_dp(2) == "0.05", "rounded per chunk {}", per_chunk.format_dp(2));
    let s = summarization_cost(30, 25_000, 200, gpt41, CachedFraction::NONE);
    ensure!(s.total == "1.548".parse().unwrap(), "total {}", s.total);
    ensure!(s.total_rounded.format_dp(2) == "1.50", "rounded total {}", s.total_rounded.format_dp(2));
    Ok(format!(
        "per chunk {} (shown {}), 30 chunks {} (rounded {})",
        per_chunk,
        per_chunk.format_dp(2),
        s.total,
        s.total_rounded.format_dp(2)
    ))
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const WORDS: &[&str] = &[
        "smoke", "PM2.5", "indoors", "filter", "N95", "children", "asthma", "wildfire", "AQI", "ozone",
        "évacuation", "µg/m³", "avoid", "limit", "outdoor", "exercise", "2025-01-10", "windows",
    ];
    const PUNCT: &[&str] = &[" ", " ", " ", ", ", ". ", "; ", "! ", " - "];
    let n = rng.random_range(1..40);
    let mut out = String::new();
    for _ in 0..n {
        if rng.random_bool(0.3) {
            let len = rng.random_range(1..9);
            out.extend((0..len).map(|_| rng.random_range(b'a'..=b'z') as char));
        } else {
            out.push_str(WORDS.choose(rng).unwrap());
        }
        out.push_str(PUNCT.choose(rng).unwrap());
    }
    out
}

/// Independent max-matching oracle over a row-major matrix.
fn oracle(m: usize, n: usize, s: &[f64]) -> (f64, f64, f64) {
    let mut p = 0.0;
    for i in 0..m {
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            if s[i * n + j] > best {
                best = s[i * n + j];
            }
        }
        p += best;
    }
    let mut r = 0.0;
    for j in 0..n {
        let mut best = f64::NEG_INFINITY;
        for i in 0..m {
            if s[i * n + j] > best {
                best = s[i * n + j];
            }
        }
        r += best;
    }
    let (p, r) = (p / m as f64, r / n as f64);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn bertscore_correctness(rt: &tokio::runtime::Runtime) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let embedder = HashEmbedder::default();
    for _ in 0..100 {
        let x = random_text(&mut rng);
        let s = rt.block_on(score_text(&x, &x, &embedder)).map_err(|e| format!("{x:?}: {e}"))?;
        for v in [s.precision, s.recall, s.f1] {
            ensure!((v - 1.0).abs() <= 1e-9, "self-score {v} for {x:?}");
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (m, n) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let data: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let s = SimilarityMatrix::new(m, n, data.clone()).map_err(|e| e.to_string())?;
        let got = BertScore::from_matrix(&s);
        let (p, r, f) = oracle(m, n, &data);
        for (a, b) in [(got.precision, p), (got.recall, r), (got.f1, f)] {
            worst = worst.max((a - b).abs());
        }
        ensure!(bert_precision(&s) == bert_recall(&s.transpose()), "transpose duality broken");
        ensure!(bert_recall(&s) == bert_precision(&s.transpose()), "transpose duality broken");
    }
    ensure!(worst <= 1e-12, "max deviation from oracle {worst:e}");
    Ok(format!(
        "100 self-scores within 1e-9, 1000 matrices within {worst:.1e} of the oracle, transpose duality exact"
    ))
}

fn random_history(rng: &mut ChaCha8Rng, start: chrono::DateTime<Utc>) -> (AirQualityHistory, Vec<(f64, f64)>) {
    let values: Vec<(f64, f64)> = (0..720)
        .map(|_| {
            let scale = if rng.random_bool(0.1) { 600.0 } else { 40.0 };
            (rng.random_range(0.0..scale), rng.random_range(0.0..scale))
        })
        .collect();
    let records = values
        .iter()
        .enumerate()
        .map(|(h, (pm25, pm10))| {
            HourlyRecord::new(start + Hours::hours(h as i64))
                .unwrap()
                .with_reading(Pollutant::Pm25, Reading::ugm3(*pm25).unwrap())
                .with_reading(Pollutant::Pm10, Reading::ugm3(*pm10).unwrap())
        })
        .collect();
    (AirQualityHistory::new(la(), records).unwrap(), values)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn daily(values: &[f64]) -> Vec<DailyAverage> {
    let first = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
    values
        .iter()
        .enumerate()
        .map(|(i, v)| DailyAverage {
            date: first + chrono::Days::new(i as u64),
            pm25_avg: *v,
            pm10_avg: *v,
        })
        .collect()
}

fn statistics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let mut windows = 0;
    let mut worst: f64 = 0.0;
    while windows < 1000 {
        let start = jan9() + Hours::days(rng.random_range(0..365));
        let (h, values) = random_history(&mut rng, start);
        let chunks = chunk_history(&h).map_err(|e| e.to_string())?;
        for c in chunks.iter().take(1000 - windows) {
            let k = c.index();
            let from = if k == 1 { 0 } else { (k - 2) * 24 };
            let window = &values[from..from + 48];
            let (m25, s25) = mean_std(&window.iter().map(|v| v.0).collect::<Vec<_>>());
            let (m10, s10) = mean_std(&window.iter().map(|v| v.1).collect::<Vec<_>>());
            let got = chunk_stats(c).map_err(|e| e.to_string())?;
            for (a, b) in [(got.pm25_mean, m25), (got.pm25_std, s25), (got.pm10_mean, m10), (got.pm10_std, s10)] {
                worst = worst.max((a - b).abs());
            }
            windows += 1;
        }
    }
    ensure!(worst <= 1e-9, "chunk stats deviate by {worst:e}");

    for _ in 0..10_000 {
        let n = rng.random_range(1..64);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-500.0..500.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-500.0..500.0)).collect();
        let (a, r) = (mae(&pred, &truth).unwrap(), rmse(&pred, &truth).unwrap());
        ensure!(r >= a - 1e-12 * a.abs().max(1.0), "rmse {r} < mae {a}");
    }

    ensure!(quartiles(&[1.0, 2.0, 3.0, 4.0]).unwrap() == (1.75, 3.25), "quartiles of 1..4");
    ensure!(quartiles(&[5.0]).unwrap() == (5.0, 5.0), "quartiles of a singleton");
    ensure!(quartiles(&[1.0, 1.0, 1.0, 1.0, 100.0]).unwrap() == (1.0, 1.0), "quartiles of [1,1,1,1,100]");
    let scan = iqr_outlier_days(&daily(&[1.0, 1.0, 1.0, 1.0, 100.0]), Pollutant::Pm25).unwrap();
    ensure!(
        scan.events.len() == 1 && scan.events[0].max_level == 100.0 && scan.events[0].start_date == scan.events[0].end_date,
        "spike day: {:?}",
        scan.events
    );
    let scan = iqr_outlier_days(&daily(&[7.0; 6]), Pollutant::Pm25).unwrap();
    ensure!(scan.events.is_empty(), "constant dailies flagged");
    let scan = iqr_outlier_days(&daily(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0, 100.0]), Pollutant::Pm25).unwrap();
    ensure!(
        scan.events.len() == 1 && (scan.events[0].end_date - scan.events[0].start_date).num_days() == 1,
        "adjacent days not merged: {:?}",
        scan.events
    );
    Ok(format!(
        "1000 windows within {worst:.1e}, RMSE >= MAE on 10000 pairs, IQR hand cases exact"
    ))
}

fn compliance_gate(rt: &tokio::runtime::Runtime) -> Check {
    let h = synthetic::wildfire_history(la(), jan9(), 720, 11);
    let ledger = Arc::new(airlens::cost::UsageLedger::new());
    let executor = Executor::with_air_data(Registry::default(), Arc::new(HistoryClient::from_fixture(h, ledger)));
    let gate = SafetyGate::rules_only();
    let registry = Registry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(100_000);
    let mut rule_rejects = 0;
    for _ in 0..100_000 {
        let len = rng.random_range(0..96);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let call = CallString::new(String::from_utf8_lossy(&bytes).into_owned());
        let rule_pass = RuleChecker.evaluate(&call).is_pass();
        let format_pass = format_check(&call, &registry).is_ok();
        ensure!(!(rule_pass && format_pass), "random input passed both checks: {:?}", call.as_str());
        rule_rejects += usize::from(!rule_pass);
        ensure!(rt.block_on(executor.run(&call, &gate)).is_err(), "random input ran: {:?}", call.as_str());
    }
    ensure!(executor.dispatch_count() == 0, "{} dispatches", executor.dispatch_count());

    let mut generated = 0;
    for spec in registry.specs() {
        for _ in 0..1000 {
            let call = CallString::new(spec.random_valid_call(&mut rng));
            ensure!(RuleChecker.evaluate(&call).is_pass(), "rule checker rejected {:?}", call.as_str());
            ensure!(format_check(&call, &registry).is_ok(), "format check rejected {:?}", call.as_str());
            generated += 1;
        }
    }

    let good = CallString::new("fetch_history(lat=34.0725, lng=-118.5445, hours=720)");
    ensure!(RuleChecker.evaluate(&good).verdict() == Verdict::Pass, "example call rejected");
    let parsed = format_check(&good, &registry).map_err(|e| e.to_string())?;
    ensure!(parsed.function == "fetch_history" && parsed.args.len() == 3, "example parse: {parsed:?}");
    let v = RuleChecker.evaluate(&CallString::new("fetch_history(1); import os"));
    ensure!(v.verdict() == Verdict::Reject && v.rationale().contains("import"), "import not rejected: {}", v.rationale());
    let v = RuleChecker.evaluate(&CallString::new("__delete__(x=1)"));
    ensure!(v.verdict() == Verdict::Reject, "dunder name passed");
    ensure!(
        matches!(
            format_check(&CallString::new("fetch_history(hours=900, lat=0, lng=0)"), &registry),
            Err(FormatError::OutOfBounds { ref name, .. }) if name == "hours"
        ),
        "hours=900 not a bounds violation"
    );
    ensure!(
        matches!(
            format_check(&CallString::new("fetch_history(lat=0)"), &registry),
            Err(FormatError::MissingParameters { ref missing, .. }) if missing == &["lng", "hours"]
        ),
        "missing lng/hours not reported"
    );
    ensure!(
        matches!(SafetyPass::from_verdicts(&good, vec![]), Err(CodeExecError::ContractViolation(_))),
        "a pass without verdicts was accepted"
    );
    let out = rt.block_on(executor.run(&good, &gate)).map_err(|e| e.to_string())?;
    ensure!(
        matches!(&out.output, CallOutput::History(h) if h.hours() == 720),
        "example dispatch did not return 720 records"
    );
    Ok(format!(
        "100000 random inputs, 0 dispatched ({rule_rejects} stopped by the rule checker), {generated} generated calls pass both checks, examples as specified"
    ))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn read_tree(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).map_err(|e| e.to_string())?;
                out.push((p.strip_prefix(root).unwrap().display().to_string(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn end_to_end_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = fixtures().join("la-720h.json");
    let script = fixtures().join("la-720h.script.json");
    // five jittered runs with different completion orders, then one strictly sequential run
    let mut variants: Vec<Vec<String>> = (1..=5)
        .map(|seed| vec!["--seed".into(), seed.to_string(), "--jitter-ms".into(), "25".into()])
        .collect();
    variants.push(vec!["--jitter-ms".into(), "0".into(), "--concurrency".into(), "1".into()]);
    let mut trees = Vec::new();
    for (i, extra) in variants.iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = Command::new(env!("CARGO_BIN_EXE_airlens"))
            .arg("analyze")
            .arg("--fixture")
            .arg(&fixture)
            .arg("--script")
            .arg(&script)
            .arg("--out")
            .arg(&out)
            .args(extra)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "run {i} failed: {}", String::from_utf8_lossy(&o.stderr));
        trees.push(read_tree(&out)?);
    }
    let files = trees[0].len();
    let bytes: usize = trees[0].iter().map(|(_, b)| b.len()).sum();
    for (i, t) in trees.iter().enumerate().skip(1) {
        if t != &trees[0] {
            let diff = t
                .iter()
                .zip(&trees[0])
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.0.clone())
                .unwrap_or_else(|| "file list".into());
            return Err(format!("run {i} differs from run 0 in {diff}"));
        }
    }
    Ok(format!("{} runs, {files} files ({bytes} bytes) byte-identical", trees.len()))
}

const RESPONSE_BLOCK: &str = r#"  "daily_averages": [
    {"date": "2025-02-04", "pm25_avg": 8.94, "pm10_avg": 13.23},
    {"date": "2025-02-05", "pm25_avg": 2.48, "pm10_avg": 7.34},
    {"date": "2025-02-06", "pm25_avg": 2.63, "pm10_avg": 7.37},
    {"date": "2025-02-07", "pm25_avg": 1.56, "pm10_avg": 5.63},
    {"date": "2025-02-08", "pm25_avg": 3.12, "pm10_avg": 13.12},
    {"date": "2025-02-09", "pm25_avg": 3.34, "pm10_avg": 15.12}
  ],
  "outlier_events": [
    {"start_date": "2025-02-04", "end_date": "2025-02-04",
     "peak_pm25": 16.2, "peak_pm10": 18.44},
    {"start_date": "2025-02-08", "end_date": "2025-02-09",
     "peak_pm25": 5.99, "peak_pm10": 19.79}
  ]"#;

fn worker_summary_parsing() -> Check {
    let d = |s: &str| s.parse::<NaiveDate>().unwrap();
    let s = parse_worker_summary_in(RESPONSE_BLOCK, 1, DateSpan::new(d("2025-02-04"), d("2025-02-09")))
        .map_err(|e| e.to_string())?;
    let want = [
        ("2025-02-04", 8.94, 13.23),
        ("2025-02-05", 2.48, 7.34),
        ("2025-02-06", 2.63, 7.37),
        ("2025-02-07", 1.56, 5.63),
        ("2025-02-08", 3.12, 13.12),
        ("2025-02-09", 3.34, 15.12),
    ];
    ensure!(s.daily_averages.len() == 6, "{} daily averages", s.daily_averages.len());
    for (got, (date, pm25, pm10)) in s.daily_averages.iter().zip(want) {
        ensure!(got.date == d(date) && got.pm25_avg == pm25 && got.pm10_avg == pm10, "daily {got:?}");
    }
    let events = [
        ("2025-02-04", "2025-02-04", 16.2, 18.44),
        ("2025-02-08", "2025-02-09", 5.99, 19.79),
    ];
    ensure!(s.outlier_events.len() == 2, "{} outlier events", s.outlier_events.len());
    for (got, (a, b, pm25, pm10)) in s.outlier_events.iter().zip(events) {
        ensure!(
            got.start_date == d(a)
                && got.end_date == d(b)
                && got.peaks.get(&Pollutant::Pm25) == Some(&pm25)
                && got.peaks.get(&Pollutant::Pm10) == Some(&pm10),
            "event {got:?}"
        );
    }
    Ok("6 daily averages and 2 outlier events with the printed values".into())
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let criteria: Vec<Criterion<'_>> = vec![
        ("chunking exactness", Box::new(chunking_exactness)),
        ("cost reproduction", Box::new(cost_reproduction)),
        ("BERTScore correctness", Box::new(|| bertscore_correctness(&rt))),
        ("statistics oracle", Box::new(statistics_oracle)),
        ("compliance gate", Box::new(|| compliance_gate(&rt))),
        ("end-to-end determinism", Box::new(end_to_end_determinism)),
        ("worker-summary parsing", Box::new(worker_summary_parsing)),
    ];
    let total = criteria.len();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}/{total}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}/{total}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", total - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
