use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use airlens::airdata::{load_fixture, synthetic, GeoPoint, RawPage};
use chrono::{DateTime, TimeZone, Utc};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_airlens"));
    for var in ["AIRLENS_AIRQ_API_KEY", "AIRLENS_AIRQ_BASE_URL", "AIRLENS_EMBED_URL", "OPENAI_API_KEY"] {
        c.env_remove(var);
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fixture() -> String {
    fixtures().join("la-720h.json").display().to_string()
}

fn script() -> String {
    fixtures().join("la-720h.script.json").display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reference_fixture_and_script_are_consistent() {
    let h = load_fixture(&fixtures().join("la-720h.json")).unwrap();
    assert_eq!(h.hours(), 720);
    let again = synthetic::wildfire_history(h.location(), h.records()[0].timestamp, 720, 11);
    assert_eq!(again.records(), h.records());
    let script: Vec<airlens::gateway::ScriptEntry> =
        serde_json::from_str(&fs::read_to_string(fixtures().join("la-720h.script.json")).unwrap()).unwrap();
    assert_eq!(script, airlens::orchestrator::mock::reference_script(&h).unwrap());
}

#[test]
fn analyze_golden_and_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for (i, seed) in ["0", "7", "13"].iter().enumerate() {
        let out = t.path().join(format!("run{i}"));
        let o = run(&["analyze", "--fixture", &fixture(), "--script", &script(), "--seed", seed, "--out", &s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        trees.push(read_tree(&out));
    }
    assert!(trees.windows(2).all(|w| w[0] == w[1]));
    let golden = fixtures().join("golden");
    for name in ["report.md", "findings.csv", "call.json"] {
        let got = &trees[0].iter().find(|(n, _)| n == name).unwrap().1;
        let want = fs::read(golden.join(name)).unwrap();
        assert_eq!(String::from_utf8_lossy(got), String::from_utf8_lossy(&want), "{name}");
    }
    let names: Vec<&str> = trees[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("summaries")).count(), 30);
    assert!(names.contains(&"cost.csv") && names.contains(&"transcripts.jsonl"));
}

#[test]
fn analyze_numerical_health_policy() {
    let t = tempfile::tempdir().unwrap();
    let num = t.path().join("num");
    let o = run(&["analyze", "--fixture", &fixture(), "--task", "numerical-summary", "--out", &s(&num)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = fs::read_to_string(num.join("error_scores.csv")).unwrap();
    assert!(scores.lines().count() >= 5, "{scores}");
    assert_eq!(fs::read_to_string(num.join("chunk_stats_oracle.csv")).unwrap().lines().count(), 31);

    let health = t.path().join("health");
    let o = run(&[
        "analyze", "--fixture", &fixture(), "--task", "health", "--date", "2025-01-10", "--class", "lung-disease",
        "--refined", "--out", &s(&health),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let h: serde_json::Value = serde_json::from_str(&fs::read_to_string(health.join("health.json")).unwrap()).unwrap();
    assert_eq!(h["refined"], true);
    assert_eq!(h["class"], "lung-disease");
    assert!(stdout(&o).contains("January 10, 2025"));

    let policy = t.path().join("policy");
    let o = run(&["analyze", "--fixture", &fixture(), "--task", "policy", "--out", &s(&policy)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(policy.join("exceedances.csv").exists());
}

#[test]
fn analyze_errors_map_to_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let out = s(&t.path().join("x"));
    let o = run(&["analyze", "--fixture", &fixture(), "--task", "health", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["analyze", "--fixture", "/nonexistent/fixture.json", "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["analyze", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));

    // a call writer that tries to escape the whitelist
    let mut entries: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(script()).unwrap()).unwrap();
    entries.insert(
        0,
        serde_json::json!({"match": {"contains": "Location: latitude"}, "response": "__import__('os').system('rm -rf /')"}),
    );
    let bad = t.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&entries).unwrap()).unwrap();
    let o = run(&["analyze", "--fixture", &fixture(), "--script", &s(&bad), "--out", &out]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("compliance"));

    // every worker and planner reply missing
    let empty = t.path().join("empty.json");
    fs::write(&empty, "[]").unwrap();
    let o = run(&["analyze", "--fixture", &fixture(), "--script", &s(&empty), "--out", &out]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn cost_command() {
    let o = run(&["cost", "--chunks", "30", "--model", "gpt41"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for want in ["per chunk (exact)       0.0516", "per chunk (rounded)     0.05", "30 chunks (exact)       1.548", "30 chunks (rounded)     1.50"] {
        assert!(text.contains(want), "{want:?} not in\n{text}");
    }
    let o = run(&["cost", "--chunks", "0"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("0 chunks (exact)       0.0"));
    let o = run(&["cost", "--model", "no-such-model"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pricing"));

    let t = tempfile::tempdir().unwrap();
    let csv = t.path().join("cost.csv");
    let o = run(&["cost", "--data-calls", "10500", "--out", &s(&csv)]);
    assert!(o.status.success());
    let body = fs::read_to_string(&csv).unwrap();
    assert!(body.contains("data_api,2.5\n"), "{body}");
}

#[test]
fn plotdata_command() {
    let t = tempfile::tempdir().unwrap();
    let scores = t.path().join("scores.csv");
    fs::write(
        &scores,
        "iteration,day,population_class,precision,recall,f1\n\
         1,2025-01-10,lung-disease,0.8,0.8,0.8\n\
         2,2025-01-10,lung-disease,0.9,0.9,0.9\n\
         1,2025-01-22,children,0.7,0.7,0.7\n",
    )
    .unwrap();
    let out = t.path().join("plots");
    let o = run(&["plotdata", "--fixture", &fixture(), "--scores", &s(&scores), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ts = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    assert_eq!(ts.lines().count(), 721);
    assert!(ts.starts_with("timestamp,pm25,pm10\n2025-01-09T00:00:00Z,"));
    let bp = fs::read_to_string(out.join("boxplot.csv")).unwrap();
    assert_eq!(bp.lines().count(), 3);

    let empty = t.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = run(&["plotdata", "--scores", &s(&empty), "--out", &s(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("boxplot.csv")).unwrap(), "group,min,q1,median,q3,max,outliers\n");

    let o = run(&["plotdata", "--fixture", "/missing/a.json", "--scores", "/missing/b.csv", "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/missing/a.json") && stderr(&o).contains("/missing/b.csv"));
}

fn generation(iteration: u32, day: &str, class: &str, text: &str) -> String {
    serde_json::json!({"iteration": iteration, "day": day, "population_class": class, "text": text}).to_string()
}

#[test]
fn evaluate_command() {
    let t = tempfile::tempdir().unwrap();
    let refs = t.path().join("refs");
    fs::create_dir(&refs).unwrap();
    let jan10 = "Stay indoors and run an air purifier; avoid outdoor exercise.";
    let jan22 = "Limit prolonged outdoor activity near the burn area.";
    fs::write(refs.join("2025-01-10_lung-disease.txt"), jan10).unwrap();
    fs::write(refs.join("2025-01-22_children.txt"), jan22).unwrap();

    let same = t.path().join("same.jsonl");
    let lines: Vec<String> = (1..=3)
        .flat_map(|i| [generation(i, "2025-01-10", "lung-disease", jan10), generation(i, "2025-01-22", "children", jan22)])
        .collect();
    fs::write(&same, lines.join("\n")).unwrap();
    let out = t.path().join("eval");
    let o = run(&["evaluate", "--candidates", &s(&same), "--references", &s(&refs), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 7);
    for line in scores.lines().skip(1) {
        let f1: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((f1 - 1.0).abs() < 1e-9, "{line}");
    }
    assert_eq!(fs::read_to_string(out.join("boxplot.csv")).unwrap().lines().count(), 3);

    let variant = t.path().join("variant.jsonl");
    let lines: Vec<String> = (1..=3)
        .map(|i| generation(i, "2025-01-10", "lung-disease", "Stay indoors and avoid outdoor exercise today."))
        .collect();
    fs::write(&variant, lines.join("\n")).unwrap();
    let o = run(&[
        "evaluate", "--candidates", &s(&same), "--variant", &s(&variant), "--references", &s(&refs), "--out", &s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = cmp.lines().collect();
    assert!(rows[0].starts_with("group,mean_normal,mean_refined,mean_delta"));
    assert!(rows[1].starts_with("all,1,"));
    let delta: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!(delta < 0.0);
    assert!(rows[2].starts_with("2025-01-10/lung-disease,"));

    let partial = t.path().join("partial.jsonl");
    fs::write(
        &partial,
        [generation(1, "2025-01-10", "lung-disease", jan10), generation(1, "2025-01-15", "elderly", "x")].join("\n"),
    )
    .unwrap();
    let o = run(&["evaluate", "--candidates", &s(&partial), "--references", &s(&refs), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: reference") && stderr(&o).contains("2025-01-15_elderly.txt"));
    assert_eq!(fs::read_to_string(out.join("scores.csv")).unwrap().lines().count(), 2);

    let none = t.path().join("none.jsonl");
    fs::write(&none, generation(1, "2025-03-01", "elderly", "x")).unwrap();
    let o = run(&["evaluate", "--candidates", &s(&none), "--references", &s(&refs), "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(6));
}

fn utc(s: &str) -> DateTime<Utc> {
    s.parse().unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn fetch_against_stub_service() {
    use axum::{routing::post, Json, Router};
    let start = Utc.with_ymd_and_hms(2025, 1, 9, 0, 0, 0).unwrap();
    let at = GeoPoint::new(34.0725, -118.5445).unwrap();
    let history = synthetic::wildfire_history(at, start, 720, 11);
    let app = Router::new().route(
        "/v1/history:lookup",
        post(move |Json(body): Json<serde_json::Value>| {
            let history = history.clone();
            async move {
                let from = utc(body["period"]["startTime"].as_str().unwrap());
                let to = utc(body["period"]["endTime"].as_str().unwrap());
                let page: Vec<_> = history
                    .records()
                    .iter()
                    .filter(|r| r.timestamp >= from && r.timestamp < to)
                    .cloned()
                    .collect();
                Json(serde_json::to_value(RawPage::from_records(&page)).unwrap())
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("la.json");
    let base = format!("http://{addr}");
    let fetch = |extra: &[&str]| {
        let mut c = bin();
        c.env("AIRLENS_AIRQ_BASE_URL", &base).env("AIRLENS_AIRQ_API_KEY", "test-key");
        c.args(["fetch", "--lat", "34.0725", "--lng", "-118.5445", "--out", &s(&out), "--clock", "2025-02-08T06:30:00Z"]);
        c.args(extra);
        c.output().unwrap()
    };
    let o = tokio::task::block_in_place(|| fetch(&["--hours", "720"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("5 data API call(s)"));
    let h = load_fixture(&out).unwrap();
    assert_eq!(h.hours(), 720);
    assert_eq!(h.records()[0].timestamp, start);

    let o = tokio::task::block_in_place(|| fetch(&["--hours", "1000"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hours"));

    let o = run(&["fetch", "--lng", "1", "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["fetch", "--lat", "34", "--lng", "-118", "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("AIRLENS_AIRQ_API_KEY"));
}

#[test]
fn synth_is_seeded() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a.json"), t.path().join("b.json"), t.path().join("c.json"));
    for (p, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        let o = run(&["synth", "--hours", "96", "--seed", seed, "--out", &s(p)]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let o = run(&["synth", "--lat", "91", "--out", &s(&a)]);
    assert_eq!(o.status.code(), Some(2));
}
