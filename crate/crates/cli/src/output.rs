//! Per-seed JSONL logs, the aggregate CSV and the run summary.
//!
//! Every file starts with the config hash so that artefacts can be matched to
//! the config that produced them; nothing time-dependent is written, so
//! reruns are byte-identical.

use crate::error::{CliError, CliResult};
use crate::runner::RunResult;
use geopg::optim::{theta_hash, RunRecord};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Metrics that may appear in the aggregate, in column order.
pub const METRICS: [&str; 4] = ["exact_j", "exact_grad_norm_sq", "return_estimate", "grad_norm"];

fn metric(rec: &RunRecord, name: &str) -> Option<f64> {
    match name {
        "exact_j" => rec.exact_j,
        "exact_grad_norm_sq" => rec.exact_grad_norm_sq,
        "return_estimate" => rec.return_estimate,
        "grad_norm" => rec.grad_norm,
        _ => None,
    }
}

#[derive(Serialize)]
struct SeedHeader<'a> {
    config_hash: &'a str,
    name: &'a str,
    seed: u64,
    returned_iteration: u64,
    returned_theta_hash: String,
    final_theta_hash: String,
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    returned_iteration: u64,
    final_j: Option<f64>,
    returned_j: Option<f64>,
    env_steps: u64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    name: &'a str,
    plan: &'a crate::runner::PlanInfo,
    seeds: Vec<SeedSummary>,
    mean_final_j: Option<f64>,
    mean_returned_j: Option<f64>,
}

/// Paths of the files written for one config.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub logs: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("records always serialise")
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean_std(&v).0)
}

/// The aggregate CSV text: one row per iteration at which every seed
/// reported at least one metric, mean and std across seeds per metric.
pub fn aggregate_csv(result: &RunResult, hash: &str) -> CliResult<String> {
    let runs: Vec<&[RunRecord]> = result.seeds.iter().map(|s| s.output.records.as_slice()).collect();
    let first = runs.first().ok_or_else(|| CliError::runtime("no seeds to aggregate"))?;
    let present: Vec<&str> =
        METRICS.iter().copied().filter(|m| runs.iter().all(|r| r.iter().any(|rec| metric(rec, m).is_some()))).collect();
    let mut out = String::new();
    out.push_str(&format!("# config_hash={hash}\n# name={}\n", result.config.name));
    let seeds: Vec<String> = result.seeds.iter().map(|s| s.seed.to_string()).collect();
    out.push_str(&format!("# seeds={}\n", seeds.join(",")));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iteration".to_string()];
    for m in &present {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.push("n".into());
    w.write_record(&header).map_err(CliError::runtime)?;
    for (i, rec) in first.iter().enumerate() {
        let mut row = vec![rec.iteration.to_string()];
        let mut any = false;
        for m in &present {
            let vals: Option<Vec<f64>> = runs.iter().map(|r| r.get(i).and_then(|rec| metric(rec, m))).collect();
            match vals {
                Some(v) => {
                    let (mean, std) = mean_std(&v);
                    row.push(format!("{mean:e}"));
                    row.push(format!("{std:e}"));
                    any = true;
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        if any {
            row.push(runs.len().to_string());
            w.write_record(&row).map_err(CliError::runtime)?;
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(CliError::runtime)?).map_err(CliError::runtime)?;
    out.push_str(&body);
    Ok(out)
}

/// Writes logs, aggregate, summary and the resolved config under `root/<name>`.
pub fn write_artifacts(result: &RunResult, root: &Path) -> CliResult<Artifacts> {
    let cfg = &result.config;
    let hash = cfg.hash();
    let dir = root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    let mut logs = Vec::new();
    for s in &result.seeds {
        let path = dir.join(format!("seed_{:05}.jsonl", s.seed));
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        let header = SeedHeader {
            config_hash: &hash,
            name: &cfg.name,
            seed: s.seed,
            returned_iteration: s.output.returned_iteration,
            returned_theta_hash: theta_hash(&s.output.returned_theta()),
            final_theta_hash: theta_hash(&s.output.final_theta()),
        };
        writeln!(f, "{}", json_line(&header))?;
        for rec in &s.output.records {
            writeln!(f, "{}", json_line(rec))?;
        }
        f.flush()?;
        logs.push(path);
    }
    let aggregate = dir.join("aggregate.csv");
    fs::write(&aggregate, aggregate_csv(result, &hash)?)?;
    let summary_path = dir.join("summary.json");
    let summary = Summary {
        config_hash: &hash,
        name: &cfg.name,
        plan: &result.plan,
        seeds: result
            .seeds
            .iter()
            .map(|s| SeedSummary {
                seed: s.seed,
                returned_iteration: s.output.returned_iteration,
                final_j: s.final_j,
                returned_j: s.returned_j,
                env_steps: s.output.total_env_steps(),
            })
            .collect(),
        mean_final_j: mean_opt(result.seeds.iter().map(|s| s.final_j)),
        mean_returned_j: mean_opt(result.seeds.iter().map(|s| s.returned_j)),
    };
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).map_err(CliError::runtime)? + "\n")?;
    let config = dir.join("config.toml");
    fs::write(&config, format!("# config_hash={hash}\n{}", cfg.to_toml_string()))?;
    Ok(Artifacts { dir, logs, aggregate, summary: summary_path, config })
}
