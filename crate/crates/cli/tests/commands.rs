//! End-to-end behaviour of the `geopg` binary.

use geopg_cli::config::RunConfig;
use geopg_cli::presets::preset;
use proptest::prelude::*;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
kind = "adv_td"
iterations = 30
seeds = [0, 1]
[environment]
type = "tabular"
fixture = "chain2"
[policy]
type = "tabular_softmax"
[optimizer]
algorithm = "rpg"
schedule = { mode = "constant", alpha = 0.05 }
"#;

const NORMALIZED: &str = "[inputs]\nell = 1.0\nl = 1.0\neta = 1.0\nrho = 1.0\nell_g = 1.0\nj_gap = 1.0\n";

fn geopg(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geopg"));
    cmd.args(args).env_remove("GEOPG_SEED");
    if let Some(v) = seed_env {
        cmd.env("GEOPG_SEED", v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&geopg(&[], None)), 2);
    assert_eq!(code(&geopg(&["run"], None)), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "name = 3\n");
    assert_eq!(code(&geopg(&["run", "--config", s(&bad)], None)), 2);
    let cfg = write(dir.path(), "small.toml", SMALL);
    assert_eq!(code(&geopg(&["run", "--config", s(&cfg), "--seeds", "5..2"], None)), 2);
    assert_eq!(code(&geopg(&["run", "--config", s(&cfg)], Some("nope"))), 2);
}

#[test]
fn table1_reports_schedule_and_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let norm = write(dir.path(), "norm.toml", NORMALIZED);
    let json = dir.path().join("schedule.json");
    let out =
        geopg(&["table1", "--constants", s(&norm), "--epsilon", "0.1", "--delta", "0.1", "--json", s(&json)], None);
    let text = String::from_utf8_lossy(&out.stdout);
    let beta: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("beta     = "))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| panic!("no beta in {text}"));
    assert!((beta - 0.005).abs() < 1e-15);
    assert_eq!(code(&out), 3);
    let sch: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!((sch["beta"].as_f64().unwrap() - 0.005).abs() < 1e-15);

    let solved =
        geopg(&["table1", "--constants", s(&norm), "--epsilon", "0.1", "--delta", "0.1", "--solve", "0.2"], None);
    assert_eq!(code(&solved), 0, "{}", String::from_utf8_lossy(&solved.stdout));

    let degenerate = write(
        dir.path(),
        "degenerate.toml",
        "kind = \"q_hat\"\n[base]\ngamma = 0.9\nu_r = 1.0\nl_r = 0.0\nb_theta = 1.0\nl_theta = 1.0\nrho_theta = 1.0\nl_i = 0.5\n",
    );
    let out = geopg(&["table1", "--constants", s(&degenerate), "--epsilon", "0.1", "--delta", "0.1"], None);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("CNC degenerate"));
}

#[test]
fn verify_exit_codes_follow_checks() {
    assert_eq!(code(&geopg(&["verify", "fast", "--only", "9"], None)), 0);
    let biased = geopg(&["verify", "fast", "--only", "2", "--inject-bias"], None);
    assert_eq!(code(&biased), 1, "{}", String::from_utf8_lossy(&biased.stdout));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&geopg(&["run", "--config", s(&cfg), "--out", s(&a)], None)), 0);
    assert_eq!(code(&geopg(&["--threads", "1", "run", "--config", s(&cfg), "--out", s(&b)], None)), 0);
    for f in ["seed_00000.jsonl", "seed_00001.jsonl", "aggregate.csv", "summary.json", "curves.svg"] {
        let x = std::fs::read(a.join("small").join(f)).unwrap();
        let y = std::fs::read(b.join("small").join(f)).unwrap();
        assert!(x == y, "{f} differs between reruns");
    }
}

#[test]
fn seed_environment_and_flags_select_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("env");
    assert_eq!(code(&geopg(&["run", "--config", s(&cfg), "--out", s(&out)], Some("40"))), 0);
    assert!(out.join("small/seed_00040.jsonl").exists());
    assert!(out.join("small/seed_00041.jsonl").exists());
    assert!(!out.join("small/seed_00000.jsonl").exists());

    let out = dir.path().join("flag");
    assert_eq!(code(&geopg(&["run", "--config", s(&cfg), "--out", s(&out), "--seed", "7"], Some("40"))), 0);
    assert!(out.join("small/seed_00007.jsonl").exists());
    assert!(!out.join("small/seed_00040.jsonl").exists());
}

#[test]
fn plot_rerenders_the_run_figure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    assert_eq!(code(&geopg(&["run", "--config", s(&cfg), "--out", s(&out), "--max-iters", "20"], None)), 0);
    let run_dir = out.join("small");
    let svg = dir.path().join("again.svg");
    let csv = run_dir.join("aggregate.csv");
    assert_eq!(code(&geopg(&["plot", "--csv", s(&csv), "--out", s(&svg)], None)), 0);
    assert_eq!(std::fs::read(&svg).unwrap(), std::fs::read(run_dir.join("curves.svg")).unwrap());
    assert_eq!(code(&geopg(&["plot", "--csv", s(&dir.path().join("missing.csv"))], None)), 2);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let args = ["sweep", "--config", s(&cfg), "--out", s(&out), "--offsets", "-5,3.7", "--alphas", "0.01,0.05"];
    assert_eq!(code(&geopg(&args, None)), 0);
    let table = std::fs::read_to_string(out.join("small-sweep/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn configs_round_trip_through_toml(
        which in 0usize..4,
        seeds in proptest::collection::vec(0u64..1_000_000, 1..8),
        batch in 1u64..50,
        max_iters in 1u64..100_000,
    ) {
        let names = ["chain2-rpg-rates", "chain2-saddle", "pendulum-paper", "pendulum-mixed"];
        let mut cfg = preset(names[which]).unwrap().remove(0);
        cfg.seeds = seeds;
        cfg.batch = batch;
        cfg.max_iters = max_iters;
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}
