//! Named experiment configurations.

use crate::config::{
    EnvSpec, ExplicitPlan, InitSpec, MonitorSpec, OptimizerSpec, PolicySpec, RunConfig, DEFAULT_MAX_ITERS,
};
use crate::error::{CliError, CliResult};
use geopg::estimators::GradientKind;
use geopg::fixtures;
use geopg::mdp::PendulumEnv;
use geopg::optim::{LogLevel, StepsizeSchedule};
use geopg::policy::{LinearSoftmaxSpec, ScoreMode};
use std::path::PathBuf;

pub const NAMES: [&str; 4] = ["pendulum-paper", "pendulum-mixed", "chain2-rpg-rates", "chain2-saddle"];

/// Budget of the pendulum presets: 80 steps of 7000 averaged estimates each,
/// which takes about a minute per seed on one core.
pub const PENDULUM_ALPHA: f64 = 7.5e-6;
pub const PENDULUM_ITERATIONS: u64 = 80;
pub const PENDULUM_BATCH: u64 = 7000;
pub const PENDULUM_MONITOR_EVERY: u64 = 10;
/// Evaluation rollouts per monitor point.
pub const PENDULUM_MONITOR_EPISODES: u64 = 100;

/// MRPG plan of the saddle preset.
pub const SADDLE_PLAN: ExplicitPlan = ExplicitPlan { alpha: 2e-4, beta: 5e-3, k_thre: 10 };
pub const SADDLE_ITERATIONS: u64 = 4000;

pub fn preset(name: &str) -> CliResult<Vec<RunConfig>> {
    match name {
        "pendulum-paper" => Ok(vec![pendulum("pendulum-paper", PendulumEnv::default())]),
        "pendulum-mixed" => {
            let base = PendulumEnv::default();
            Ok(vec![pendulum("pendulum-mixed", base.reshaped(10.0))])
        }
        "chain2-rpg-rates" => Ok(rates()),
        "chain2-saddle" => saddle(),
        other => Err(CliError::usage(format!("unknown preset {other:?}; known: {}", NAMES.join(", ")))),
    }
}

fn pendulum(name: &str, env: PendulumEnv) -> RunConfig {
    RunConfig {
        name: name.into(),
        environment: EnvSpec::Pendulum(env),
        policy: PolicySpec::TruncGaussMlp { hidden: [10, 10], sigma: 1.0, score_mode: ScoreMode::Exact },
        kind: GradientKind::AdvTd,
        optimizer: OptimizerSpec::Rpg { schedule: StepsizeSchedule::Constant { alpha: PENDULUM_ALPHA } },
        iterations: PENDULUM_ITERATIONS,
        batch: PENDULUM_BATCH,
        max_iters: DEFAULT_MAX_ITERS,
        seeds: (0..30).collect(),
        init: InitSpec::Policy,
        monitor: MonitorSpec { every: PENDULUM_MONITOR_EVERY, episodes: PENDULUM_MONITOR_EPISODES, horizon: 200 },
        log: LogLevel::Summary,
        out_dir: PathBuf::from("out"),
    }
}

fn tabular(name: &str, fixture: &str, offset: f64, policy: PolicySpec, optimizer: OptimizerSpec) -> RunConfig {
    RunConfig {
        name: name.into(),
        environment: EnvSpec::Tabular { fixture: Some(fixture.into()), path: None, reward_offset: offset },
        policy,
        kind: GradientKind::QHat,
        optimizer,
        iterations: 10_000,
        batch: 1,
        max_iters: DEFAULT_MAX_ITERS,
        seeds: (0..20).collect(),
        init: InitSpec::Zeros,
        monitor: MonitorSpec::default(),
        log: LogLevel::Summary,
        out_dir: PathBuf::from("out"),
    }
}

fn linear(spec: LinearSoftmaxSpec) -> PolicySpec {
    PolicySpec::LinearSoftmax { features: spec.features }
}

/// Diminishing `k^{-1/2}` against two constant steps on the aliased chain.
fn rates() -> Vec<RunConfig> {
    let policy = linear(fixtures::chain2_aliased_policy().into());
    [
        ("chain2-rpg-rates-diminishing", StepsizeSchedule::Diminishing { a: 0.5 }),
        ("chain2-rpg-rates-const-0.01", StepsizeSchedule::Constant { alpha: 0.01 }),
        ("chain2-rpg-rates-const-0.05", StepsizeSchedule::Constant { alpha: 0.05 }),
    ]
    .into_iter()
    .map(|(name, schedule)| tabular(name, "chain2", 0.0, policy.clone(), OptimizerSpec::Rpg { schedule }))
    .collect()
}

/// MRPG and RPG started at the strict saddle, plus MRPG on rewards shifted so
/// that they straddle zero.
fn saddle() -> CliResult<Vec<RunConfig>> {
    let sp = fixtures::saddle_point()?;
    let mixed = fixtures::zero_value_offset(&fixtures::chain2_saddle(), sp.j);
    let policy = linear(fixtures::saddle_policy().into());
    let mrpg = OptimizerSpec::Mrpg { plan: Some(SADDLE_PLAN), target: None };
    let rpg = OptimizerSpec::Rpg { schedule: StepsizeSchedule::Constant { alpha: SADDLE_PLAN.alpha } };
    let mut out = vec![
        tabular("chain2-saddle-mrpg", "chain2_saddle", 0.0, policy.clone(), mrpg.clone()),
        tabular("chain2-saddle-rpg", "chain2_saddle", 0.0, policy.clone(), rpg),
        tabular("chain2-saddle-mrpg-mixed", "chain2_saddle", mixed, policy, mrpg),
    ];
    for c in &mut out {
        c.kind = GradientKind::AdvTd;
        c.iterations = SADDLE_ITERATIONS;
        c.seeds = (0..30).collect();
        c.init = InitSpec::Values { values: sp.theta.iter().copied().collect() };
        c.monitor.every = 100;
    }
    Ok(out)
}
