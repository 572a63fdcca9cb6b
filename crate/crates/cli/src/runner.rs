//! Executes a [`RunConfig`] over its seeds.

use crate::config::{EnvSpec, InitSpec, OptimizerSpec, PolicySpec, RunConfig};
use crate::error::{CliError, CliResult};
use geopg::constants::{derive_constants, BaseConstants};
use geopg::linalg::restricted_eigen;
use geopg::mdp::{Environment, PendulumEnv, PendulumState, TabularMdp};
use geopg::optim::{
    build_mrpg_schedule, feasible_constants, mrpg_run, rpg_run, MrpgPlan, MrpgSchedule, RolloutReturnMonitor,
    RunOptions, RunOutput, ScheduleInputs, TabularMonitor,
};
use geopg::oracle;
use geopg::par::{try_map_indexed, Execution};
use geopg::policy::{LinearSoftmax, Policy, TabularSoftmax, Theta, TruncGaussLinear, TruncGaussMlp};
use geopg::rng::seeded;

/// One finished seed. `returned_j`/`final_j` are exact on tabular problems.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub output: RunOutput,
    pub final_j: Option<f64>,
    pub returned_j: Option<f64>,
}

/// Everything `run` produced for one config.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub plan: PlanInfo,
    pub seeds: Vec<SeedRun>,
}

/// The step sizes actually used, for the output headers.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum PlanInfo {
    Rpg { iterations: u64 },
    Mrpg { plan: MrpgPlan, schedule: Option<Box<MrpgSchedule>> },
}

impl PlanInfo {
    pub fn iterations(&self) -> u64 {
        match self {
            PlanInfo::Rpg { iterations } => *iterations,
            PlanInfo::Mrpg { plan, .. } => plan.iterations,
        }
    }
}

pub fn execute(config: &RunConfig) -> CliResult<RunResult> {
    config.validate()?;
    match (&config.environment, &config.policy) {
        (EnvSpec::Tabular { .. }, PolicySpec::TabularSoftmax) => {
            let mdp = config.tabular_mdp()?.expect("tabular environment");
            let policy = TabularSoftmax::for_mdp(&mdp);
            run_tabular(config, &mdp, &policy)
        }
        (EnvSpec::Tabular { .. }, PolicySpec::LinearSoftmax { features }) => {
            let mdp = config.tabular_mdp()?.expect("tabular environment");
            let policy = LinearSoftmax::new(features)?;
            if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
                return Err(CliError::usage("linear softmax features do not match the MDP's states and actions"));
            }
            run_tabular(config, &mdp, &policy)
        }
        (EnvSpec::Pendulum(env), PolicySpec::TruncGaussMlp { hidden, sigma, score_mode }) => {
            let policy = TruncGaussMlp::<PendulumState>::new(*hidden, *sigma, env.torque_limit, *score_mode)?;
            run_rollout(config, env, &policy)
        }
        (EnvSpec::Pendulum(env), PolicySpec::TruncGaussLinear { sigma, score_mode }) => {
            let policy = TruncGaussLinear::<PendulumState>::new(*sigma, env.torque_limit, *score_mode)?;
            run_rollout(config, env, &policy)
        }
        _ => Err(CliError::usage("environment and policy do not fit together")),
    }
}

fn initial_theta<S, A, P>(config: &RunConfig, policy: &P, seed: u64) -> CliResult<Theta>
where
    P: Policy<S, A>,
{
    let theta = match &config.init {
        InitSpec::Zeros => Theta::zeros(policy.dim()),
        InitSpec::Policy => policy.init_theta(&mut seeded(seed)),
        InitSpec::Values { values } => Theta::from_row_slice(values),
    };
    policy.check_theta(&theta).map_err(|e| CliError::usage(format!("initial theta: {e}")))?;
    Ok(theta)
}

fn options(config: &RunConfig, seed: u64) -> RunOptions {
    RunOptions {
        log: config.log,
        monitor_every: config.monitor.every,
        batch: config.batch,
        ..RunOptions::new(seed, config.kind)
    }
}

/// Resolves the MRPG plan; target mode builds the schedule from the problem
/// constants at `theta0`, which needs analytic score bounds.
fn mrpg_plan<P>(config: &RunConfig, mdp: Option<&TabularMdp>, policy: &P, theta0: &Theta) -> CliResult<PlanInfo>
where
    P: Policy<usize, usize>,
{
    let OptimizerSpec::Mrpg { plan, target } = &config.optimizer else { unreachable!("called for MRPG configs only") };
    if let Some(p) = plan {
        let iterations = config.capped_iterations();
        let plan = MrpgPlan {
            alpha: p.alpha,
            beta: p.beta,
            k_thre: p.k_thre,
            iterations,
            truncated: iterations < config.iterations,
        };
        return Ok(PlanInfo::Mrpg { plan, schedule: None });
    }
    let t = target.expect("validated: plan or target");
    let (Some(mdp), Some(bounds)) = (mdp, policy.analytic_bounds()) else {
        return Err(CliError::usage("MRPG targets need a tabular problem with analytic score bounds; give a plan"));
    };
    let fisher = oracle::exact_fisher(mdp, policy, theta0)?;
    let (eigs, _) = restricted_eigen(&fisher, &policy.invariant_directions())?;
    let l_i = eigs.last().copied().unwrap_or(0.0).max(0.0);
    let base = BaseConstants::from_bounds(mdp.gamma(), mdp.reward_bounds(), bounds, l_i);
    let pc = derive_constants(base)?;
    let consts = match t.constants {
        Some(c) => c,
        None => {
            feasible_constants(&ScheduleInputs::from_constants(&pc, config.kind, t.j_gap), t.epsilon, t.delta, 0.5)?
        }
    };
    let schedule = build_mrpg_schedule(&pc, config.kind, t.epsilon, t.delta, t.j_gap, consts)?;
    let plan = schedule.plan(Some(config.max_iters));
    Ok(PlanInfo::Mrpg { plan, schedule: Some(Box::new(schedule)) })
}

fn seed_exec() -> Execution {
    if geopg::par::parallel_enabled() {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn run_tabular<P>(config: &RunConfig, mdp: &TabularMdp, policy: &P) -> CliResult<RunResult>
where
    P: Policy<usize, usize>,
{
    let monitor = TabularMonitor { mdp, policy };
    let plan = match config.optimizer {
        OptimizerSpec::Rpg { .. } => PlanInfo::Rpg { iterations: config.capped_iterations() },
        OptimizerSpec::Mrpg { .. } => {
            mrpg_plan(config, Some(mdp), policy, &initial_theta(config, policy, config.seeds[0])?)?
        }
    };
    let seeds = try_map_indexed(config.seeds.len(), seed_exec(), |i| -> CliResult<SeedRun> {
        let seed = config.seeds[i];
        let theta0 = initial_theta(config, policy, seed)?;
        let output = run_one(config, &plan, mdp, policy, &theta0, seed, &monitor)?;
        let final_j = Some(oracle::j_theta(mdp, policy, &output.final_theta())?);
        let returned_j = Some(oracle::j_theta(mdp, policy, &output.returned_theta())?);
        Ok(SeedRun { seed, output, final_j, returned_j })
    })?;
    Ok(RunResult { config: config.clone(), plan, seeds })
}

fn run_rollout<P>(config: &RunConfig, env: &PendulumEnv, policy: &P) -> CliResult<RunResult>
where
    P: Policy<PendulumState, f64>,
{
    let plan = match &config.optimizer {
        OptimizerSpec::Rpg { .. } => PlanInfo::Rpg { iterations: config.capped_iterations() },
        OptimizerSpec::Mrpg { plan: Some(p), .. } => {
            let iterations = config.capped_iterations();
            PlanInfo::Mrpg {
                plan: MrpgPlan {
                    alpha: p.alpha,
                    beta: p.beta,
                    k_thre: p.k_thre,
                    iterations,
                    truncated: iterations < config.iterations,
                },
                schedule: None,
            }
        }
        OptimizerSpec::Mrpg { .. } => {
            return Err(CliError::usage("MRPG targets need a tabular problem; give a plan for the pendulum"))
        }
    };
    let seeds = try_map_indexed(config.seeds.len(), seed_exec(), |i| -> CliResult<SeedRun> {
        let seed = config.seeds[i];
        let theta0 = initial_theta(config, policy, seed)?;
        let monitor = RolloutReturnMonitor {
            env,
            policy,
            episodes: config.monitor.episodes,
            horizon: config.monitor.horizon,
            seed,
        };
        let output = run_one(config, &plan, env, policy, &theta0, seed, &monitor)?;
        Ok(SeedRun { seed, output, final_j: None, returned_j: None })
    })?;
    Ok(RunResult { config: config.clone(), plan, seeds })
}

fn run_one<E, P, M>(
    config: &RunConfig,
    plan: &PlanInfo,
    env: &E,
    policy: &P,
    theta0: &Theta,
    seed: u64,
    monitor: &M,
) -> CliResult<RunOutput>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    M: geopg::optim::Monitor,
{
    let opts = options(config, seed);
    let out = match (&config.optimizer, plan) {
        (OptimizerSpec::Rpg { schedule }, PlanInfo::Rpg { iterations }) => {
            rpg_run(env, policy, theta0, schedule, *iterations, &opts, monitor)
        }
        (OptimizerSpec::Mrpg { .. }, PlanInfo::Mrpg { plan, .. }) => {
            mrpg_run(env, policy, theta0, plan, &opts, monitor)
        }
        _ => unreachable!("plan matches optimizer"),
    };
    out.map_err(|e| CliError::runtime(format!("seed {seed}: {e}")))
}
