use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use airlens::airdata::PopulationClass;
use airlens::eval::{
    boxplot_csv, boxplot_rows, compare_prompt_variants, score_text, scores_csv, Embedder,
    HashEmbedder, HttpEmbedder, ScoreRecord,
};
use chrono::NaiveDate;
use serde::Deserialize;

use crate::data::write;
use crate::error::CliError;
use crate::{EmbedderArg, EvaluateArgs};

#[derive(Debug, Deserialize)]
struct Generation {
    iteration: u32,
    day: NaiveDate,
    population_class: PopulationClass,
    text: String,
}

fn read_generations(path: &Path) -> Result<Vec<Generation>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn reference_path(dir: &Path, day: NaiveDate, class: PopulationClass) -> PathBuf {
    dir.join(format!("{day}_{class}.txt"))
}

/// Scores every generation that has a reference; missing references are
/// reported once each and skipped.
async fn score_set(
    gens: &[Generation],
    references: &Path,
    embedder: &dyn Embedder,
) -> Result<Vec<ScoreRecord>, CliError> {
    let mut cache: BTreeMap<PathBuf, Option<String>> = BTreeMap::new();
    let mut out = Vec::with_capacity(gens.len());
    for g in gens {
        let path = reference_path(references, g.day, g.population_class);
        let reference = cache
            .entry(path.clone())
            .or_insert_with(|| match fs::read_to_string(&path) {
                Ok(t) => Some(t),
                Err(_) => {
                    eprintln!("warning: reference {} is missing; skipping its generations", path.display());
                    None
                }
            });
        let Some(reference) = reference else { continue };
        let s = score_text(&g.text, reference, embedder).await?;
        out.push(ScoreRecord {
            iteration: g.iteration,
            day: g.day,
            population_class: g.population_class,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        });
    }
    Ok(out)
}

fn f1_by_group(records: &[ScoreRecord]) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        out.entry(r.group()).or_default().push(r.f1);
    }
    out
}

fn comparison_csv(normal: &[ScoreRecord], refined: &[ScoreRecord]) -> Result<String, CliError> {
    let mut out = String::from(
        "group,mean_normal,mean_refined,mean_delta,min_normal,min_refined,q3_normal,q1_refined,separated\n",
    );
    let (n, r) = (f1_by_group(normal), f1_by_group(refined));
    let all = |rs: &[ScoreRecord]| rs.iter().map(|x| x.f1).collect::<Vec<_>>();
    let mut rows = vec![("all".to_string(), all(normal), all(refined))];
    let groups: BTreeSet<&String> = n.keys().filter(|k| r.contains_key(*k)).collect();
    rows.extend(groups.into_iter().map(|g| (g.clone(), n[g].clone(), r[g].clone())));
    for (group, a, b) in rows {
        let c = compare_prompt_variants(&a, &b)?;
        out.push_str(&format!(
            "{group},{},{},{},{},{},{},{},{}\n",
            c.mean_normal, c.mean_refined, c.mean_delta, c.min_normal, c.min_refined, c.q3_normal, c.q1_refined, c.separated
        ));
    }
    Ok(out)
}

pub async fn run(args: EvaluateArgs, seed: u64) -> Result<(), CliError> {
    let embedder: Box<dyn Embedder> = match args.embedder {
        EmbedderArg::Hash => Box::new(HashEmbedder::new(args.dim, seed)?),
        EmbedderArg::Http => Box::new(HttpEmbedder::from_env().map_err(|e| CliError::Provider(e.to_string()))?),
    };
    if !args.references.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", args.references.display())));
    }
    let mut sets = vec![("scores", args.candidates.clone())];
    if let Some(v) = &args.variant {
        sets.push(("variant-scores", v.clone()));
    }
    let mut scored = Vec::new();
    for (name, path) in &sets {
        let gens = read_generations(path)?;
        let records = score_set(&gens, &args.references, embedder.as_ref()).await?;
        write(&args.out.join(format!("{name}.csv")), &scores_csv(&records)?)?;
        let boxes = boxplot_rows(&records)?;
        let box_name = name.replace("scores", "boxplot");
        write(&args.out.join(format!("{box_name}.csv")), &boxplot_csv(&boxes)?)?;
        println!(
            "{name}: scored {} of {} generation(s) in {} group(s)",
            records.len(),
            gens.len(),
            boxes.len()
        );
        scored.push(records);
    }
    if let [normal, refined] = scored.as_slice() {
        if normal.is_empty() || refined.is_empty() {
            return Err(CliError::Evaluation("a generation set has no scorable pairs".into()));
        }
        let csv = comparison_csv(normal, refined)?;
        write(&args.out.join("comparison.csv"), &csv)?;
        if let Some(all) = csv.lines().nth(1) {
            println!("comparison: {all}");
        }
    }
    if scored.iter().all(Vec::is_empty) {
        return Err(CliError::Evaluation("no generation had a reference".into()));
    }
    Ok(())
}
