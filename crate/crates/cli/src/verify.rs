//! Verification batteries. `verify` and the acceptance target run the same
//! checks; the fast suite skips the optimisation runs.

use crate::error::{CliError, CliResult};
use crate::presets;
use crate::runner::{execute, RunResult};
use geopg::analysis::{cnc_estimate, cosine, rate_fit, running_mean, unbiasedness_test, TestReport};
use geopg::constants::{derive_constants, BaseConstants, ProblemConstants};
use geopg::estimators::{est_q, est_q_with_horizon, est_v, eval_pg_batch, GradientKind};
use geopg::fixtures;
use geopg::linalg::{restricted_eigen, spectral_norm};
use geopg::mdp::{Environment, PendulumEnv, TabularMdp};
use geopg::optim::{build_schedule, feasible_constants, RunRecord, ScheduleInputs};
use geopg::oracle;
use geopg::par::{map_indexed, try_map_indexed, Execution};
use geopg::policy::{Policy, TabularSoftmax, Theta, TruncGaussMlp};
use geopg::rng::{seeded, Purpose, StreamKey};
use nalgebra::DVector;
use rand::Rng;
use std::fmt::Write;
use std::time::Instant;

/// Which battery to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Fast,
    Full,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub suite: Suite,
    /// Adds a constant to every policy-gradient estimate; the suite must then fail.
    pub inject_bias: bool,
}

impl VerifyOptions {
    pub fn new(suite: Suite) -> Self {
        VerifyOptions { suite, inject_bias: false }
    }
}

/// One report within a criterion. A control is a check built to fail, so it
/// counts as satisfied when its report does not pass.
#[derive(Debug, Clone)]
pub struct Check {
    pub report: TestReport,
    pub control: bool,
}

impl Check {
    fn plain(report: TestReport) -> Self {
        Check { report, control: false }
    }

    fn control(report: TestReport) -> Self {
        Check { report, control: true }
    }

    pub fn ok(&self) -> bool {
        self.report.pass != self.control
    }
}

/// The checks of one criterion and how long they took.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn ok(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::ok)
    }
}

/// Criterion ids and titles; 0 holds the negative controls.
pub const CRITERIA: [(u32, &str); 12] = [
    (0, "negative controls"),
    (1, "Q and V estimates are unbiased"),
    (2, "policy-gradient estimates are unbiased"),
    (3, "almost-sure estimate bounds"),
    (4, "diminishing-step rate"),
    (5, "constant-step plateau ordering"),
    (6, "reward-offset invariance of greedy policies"),
    (7, "Hessian formula and Lipschitz constants"),
    (8, "correlated negative curvature floor"),
    (9, "MRPG schedule builder"),
    (10, "MRPG escapes the saddle"),
    (11, "pendulum preset"),
];

/// Criteria in each suite.
pub fn suite_ids(suite: Suite) -> Vec<u32> {
    match suite {
        Suite::Fast => vec![0, 1, 2, 3, 6, 7, 8, 9],
        Suite::Full => (0..=11).collect(),
    }
}

fn exec() -> Execution {
    if geopg::par::parallel_enabled() {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

const SEED: u64 = 20_240_601;
const Z_MAX: f64 = 4.0;
/// Bias added by `inject_bias`, in gradient units.
const INJECTED_BIAS: f64 = 1.0;

pub fn run_criterion(id: u32, opts: &VerifyOptions) -> CliResult<CriterionResult> {
    let title = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::usage(format!("unknown criterion {id}")))?;
    let start = Instant::now();
    let checks = match id {
        0 => controls()?,
        1 => value_unbiasedness()?,
        2 => gradient_unbiasedness(opts)?,
        3 => almost_sure_bounds()?,
        4 => rate()?,
        5 => plateau()?,
        6 => offset_invariance()?,
        7 => hessian_and_lipschitz()?,
        8 => cnc_floor()?,
        9 => schedule_builder()?,
        10 => saddle_escape()?,
        11 => pendulum()?,
        _ => unreachable!("id listed in CRITERIA"),
    };
    Ok(CriterionResult { id, title, checks, seconds: start.elapsed().as_secs_f64() })
}

pub fn run_suite(opts: &VerifyOptions) -> CliResult<Vec<CriterionResult>> {
    suite_ids(opts.suite).into_iter().map(|id| run_criterion(id, opts)).collect()
}

/// The table printed by `verify`.
pub fn render(results: &[CriterionResult]) -> String {
    let mut s = String::new();
    for r in results {
        writeln!(s, "[{}] {:>2} {} ({:.1}s)", if r.ok() { "PASS" } else { "FAIL" }, r.id, r.title, r.seconds).unwrap();
        for c in &r.checks {
            let tag = match (c.ok(), c.control) {
                (true, false) => "ok  ",
                (true, true) => "ctl ",
                (false, _) => "FAIL",
            };
            writeln!(
                s,
                "       {tag} {:<58} stat {:>12.5e} thr {:>12.5e} n {:>9}  {}",
                c.report.name, c.report.statistic, c.report.threshold, c.report.n, c.report.detail
            )
            .unwrap();
        }
    }
    s
}

fn base_constants(mdp: &TabularMdp, policy: &impl Policy<usize, usize>, l_i: f64) -> CliResult<ProblemConstants> {
    let bounds = policy.analytic_bounds().ok_or_else(|| CliError::runtime("policy has no analytic bounds"))?;
    Ok(derive_constants(BaseConstants::from_bounds(mdp.gamma(), mdp.reward_bounds(), bounds, l_i))?)
}

fn random_theta(seed: u64, dim: usize, scale: f64) -> Theta {
    let mut rng = seeded(seed);
    Theta::from_fn(dim, |_, _| rng.random_range(-scale..=scale))
}

fn fixtures_named() -> [(&'static str, TabularMdp); 2] {
    [("chain2", fixtures::chain2()), ("ring3", fixtures::ring3())]
}

/// Sample `i` stacks `Q_hat(s, a)` for every pair and then `V_hat(s)` for
/// every state, each from its own stream.
fn value_samples(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Theta,
    n: usize,
    seed: u64,
) -> CliResult<Vec<DVector<f64>>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let samples = try_map_indexed(n, exec(), |i| -> geopg::Result<DVector<f64>> {
        let mut v = DVector::zeros(ns * na + ns);
        for s in 0..ns {
            for a in 0..na {
                let key = StreamKey::new(seed, (s * na + a) as u64, i as u64);
                v[s * na + a] = est_q(
                    mdp,
                    policy,
                    theta,
                    &s,
                    &a,
                    &mut key.rng(Purpose::QHorizon),
                    &mut key.rng(Purpose::QRollout),
                )?
                .value;
            }
            let key = StreamKey::new(seed, (ns * na + s) as u64, i as u64);
            v[ns * na + s] =
                est_v(mdp, policy, theta, &s, &mut key.rng(Purpose::VHorizon), &mut key.rng(Purpose::VRollout))?.value;
        }
        Ok(v)
    })?;
    Ok(samples)
}

fn exact_value_vector(mdp: &TabularMdp, policy: &TabularSoftmax, theta: &Theta) -> CliResult<DVector<f64>> {
    let sol = oracle::exact_values(mdp, policy, theta)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    Ok(DVector::from_fn(ns * na + ns, |i, _| if i < ns * na { sol.q[(i / na, i % na)] } else { sol.v[i - ns * na] }))
}

fn value_unbiasedness() -> CliResult<Vec<Check>> {
    let n = 200_000;
    let mut out = Vec::new();
    for (i, (name, mdp)) in fixtures_named().into_iter().enumerate() {
        let policy = TabularSoftmax::for_mdp(&mdp);
        let theta = random_theta(SEED + i as u64, policy.dim(), 1.0);
        let samples = value_samples(&mdp, &policy, &theta, n, SEED + i as u64)?;
        let exact = exact_value_vector(&mdp, &policy, &theta)?;
        out.push(Check::plain(unbiasedness_test(
            &format!("{name}: Q_hat and V_hat vs exact"),
            &samples,
            &exact,
            Z_MAX,
        )?));
    }
    Ok(out)
}

fn gradient_reports(
    name: &str,
    mdp: &TabularMdp,
    theta: &Theta,
    kind: GradientKind,
    n: usize,
    seed: u64,
    bias: f64,
) -> CliResult<Vec<TestReport>> {
    let policy = TabularSoftmax::for_mdp(mdp);
    let exact = oracle::exact_policy_gradient(mdp, &policy, theta)?;
    let samples: Vec<DVector<f64>> = eval_pg_batch(kind, mdp, &policy, theta, StreamKey::new(seed, 0, 0), n, exec())?
        .into_iter()
        .map(|g| g.vector.add_scalar(bias))
        .collect();
    let label = format!("{name} {}", kind.name());
    let mut out = vec![unbiasedness_test(&format!("{label}: per-component z"), &samples, &exact, Z_MAX)?];
    if exact.norm() > 1e-3 {
        let mean = samples.iter().fold(DVector::zeros(exact.len()), |acc, g| acc + g) / n as f64;
        let cos = cosine(&mean, &exact).unwrap_or(0.0);
        out.push(
            TestReport::new(format!("{label}: 1 - cosine(mean, exact)"), 1.0 - cos, 1e-3, n as u64)
                .with_detail(format!("cosine {cos:.6}, |exact| {:.4e}", exact.norm())),
        );
    }
    Ok(out)
}

/// Of 50 seeded candidates in `[-2, 2]^d`, the one with the largest exact
/// gradient, so that the direction check has signal. Chosen from the oracle
/// alone, before any sampling.
fn steepest_candidate(mdp: &TabularMdp, seed: u64) -> CliResult<Theta> {
    let policy = TabularSoftmax::for_mdp(mdp);
    let mut best = (f64::NEG_INFINITY, Theta::zeros(policy.dim()));
    for c in 0..50 {
        let theta = random_theta(seed + c, policy.dim(), 2.0);
        let norm = oracle::exact_policy_gradient(mdp, &policy, &theta)?.norm();
        if norm > best.0 {
            best = (norm, theta);
        }
    }
    Ok(best.1)
}

fn gradient_unbiasedness(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let n = 100_000;
    let bias = if opts.inject_bias { INJECTED_BIAS } else { 0.0 };
    let mut out = Vec::new();
    for (i, (name, mdp)) in fixtures_named().into_iter().enumerate() {
        let theta = steepest_candidate(&mdp, SEED + 10 + 100 * i as u64)?;
        for (j, kind) in GradientKind::ALL.into_iter().enumerate() {
            let seed = SEED + 100 + (3 * i + j) as u64;
            out.extend(gradient_reports(name, &mdp, &theta, kind, n, seed, bias)?.into_iter().map(Check::plain));
        }
    }
    Ok(out)
}

fn almost_sure_bounds() -> CliResult<Vec<Check>> {
    let n = 1_000_000;
    let mut out = Vec::new();
    for (i, (name, mdp)) in fixtures_named().into_iter().enumerate() {
        let policy = TabularSoftmax::for_mdp(&mdp);
        let pc = base_constants(&mdp, &policy, 0.0)?;
        let q_bound = pc.q_hat_bound();
        for (j, kind) in GradientKind::ALL.into_iter().enumerate() {
            let ell = pc.ell(kind);
            let seed = SEED + 200 + (3 * i + j) as u64;
            // Draws at fresh parameters every 1000 estimates so the bound is probed across theta.
            let chunks = n / 1000;
            let per_chunk = try_map_indexed(chunks, exec(), |c| -> geopg::Result<(u64, f64, f64)> {
                let theta = random_theta(seed * 1_000_003 + c as u64, policy.dim(), 3.0);
                let gs = eval_pg_batch(
                    kind,
                    &mdp,
                    &policy,
                    &theta,
                    StreamKey::new(seed, c as u64, 0),
                    1000,
                    Execution::Sequential,
                )?;
                let mut violations = 0;
                let (mut q_max, mut g_max) = (0.0f64, 0.0f64);
                for g in &gs {
                    let m = &g.meta;
                    for h in [m.q_hat, m.v_hat, m.v_hat_next].into_iter().flatten() {
                        q_max = q_max.max(h.value.abs() / q_bound);
                        violations += u64::from(h.value.abs() > q_bound * (1.0 + 1e-12));
                    }
                    let norm = g.vector.norm();
                    g_max = g_max.max(norm / ell);
                    violations += u64::from(norm > ell * (1.0 + 1e-12));
                }
                Ok((violations, q_max, g_max))
            })?;
            let violations: u64 = per_chunk.iter().map(|c| c.0).sum();
            let q_max = per_chunk.iter().map(|c| c.1).fold(0.0, f64::max);
            let g_max = per_chunk.iter().map(|c| c.2).fold(0.0, f64::max);
            out.push(Check::plain(
                TestReport::new(
                    format!("{name} {}: bound violations", kind.name()),
                    violations as f64,
                    0.0,
                    (chunks * 1000) as u64,
                )
                .with_detail(format!("max |Q_hat|/bound {q_max:.4}, max |g|/ell {g_max:.4}")),
            ));
        }
    }
    Ok(out)
}

/// 20-seed mean of the exact squared gradient norm per iteration.
fn mean_grad_norm_sq(result: &RunResult) -> CliResult<Vec<f64>> {
    let series: Vec<Vec<f64>> =
        result.seeds.iter().map(|s| s.output.records.iter().filter_map(|r| r.exact_grad_norm_sq).collect()).collect();
    Ok(geopg::analysis::mean_series(&series)?)
}

fn rates_preset(index: usize) -> CliResult<RunResult> {
    let config = presets::preset("chain2-rpg-rates")?.swap_remove(index);
    execute(&config)
}

fn rate() -> CliResult<Vec<Check>> {
    let result = rates_preset(0)?;
    let mean = mean_grad_norm_sq(&result)?;
    // Record k holds theta_k; ascent step k uses alpha_{k+1}, so index from 1.
    let rm = running_mean(&mean[1..]);
    let series: Vec<(f64, f64)> = rm.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect();
    let window = series.len() * 9 / 10;
    let slope = rate_fit(&series, window)?;
    let in_band = (-0.7..=-0.3).contains(&slope);
    let report = TestReport::new(
        "log-log slope of the running mean of |grad J|^2",
        if in_band { 0.0 } else { 1.0 },
        0.0,
        mean.len() as u64,
    )
    .with_detail(format!("slope {slope:.4}, band [-0.7, -0.3], {} seeds, window {window}", result.seeds.len()))
    .with_seeds(result.config.seeds.clone());
    Ok(vec![Check::plain(report)])
}

fn plateau() -> CliResult<Vec<Check>> {
    let tail = |r: &RunResult| -> CliResult<f64> {
        let m = mean_grad_norm_sq(r)?;
        let t = &m[m.len() - 1000..];
        Ok(t.iter().sum::<f64>() / t.len() as f64)
    };
    let small = rates_preset(1)?;
    let large = rates_preset(2)?;
    let (p_small, p_large) = (tail(&small)?, tail(&large)?);
    let report =
        TestReport::new("trailing-1000 mean |grad J|^2: alpha 0.01 minus alpha 0.05", p_small - p_large, 0.0, 1000)
            .with_detail(format!(
                "alpha 0.01: {p_small:.4e}, alpha 0.05: {p_large:.4e}, ratio {:.3}",
                p_large / p_small
            ))
            .with_seeds(small.config.seeds.clone());
    // Strictly larger: equality fails.
    let report = TestReport { pass: p_large > p_small, ..report };
    Ok(vec![Check::plain(report)])
}

fn offset_invariance() -> CliResult<Vec<Check>> {
    let mut mismatches = 0u64;
    let mut checked = 0u64;
    for i in 0..50 {
        let mdp = fixtures::random_mdp(&mut seeded(SEED + 600 + i), 6, 4, 0.9)?;
        let base = oracle::value_iteration(&mdp, 1e-12)?.greedy;
        for offset in [-5.0, 3.7] {
            let shifted = oracle::value_iteration(&mdp.reshaped(offset), 1e-12)?.greedy;
            mismatches += u64::from(shifted != base);
            checked += 1;
        }
    }
    Ok(vec![Check::plain(
        TestReport::new("greedy policy changes under offsets -5 and 3.7", mismatches as f64, 0.0, checked)
            .with_detail("50 random MDPs, up to 6 states and 4 actions"),
    )])
}

fn hessian_and_lipschitz() -> CliResult<Vec<Check>> {
    let mdp = fixtures::chain2();
    let policy = TabularSoftmax::for_mdp(&mdp);
    let d = policy.dim();
    let mut worst_rel = 0.0f64;
    for i in 0..20 {
        let theta = random_theta(SEED + 700 + i, d, 2.0);
        let h = oracle::exact_hessian(&mdp, &policy, &theta)?;
        let fd = oracle::fd_hessian(|t| oracle::j_theta(&mdp, &policy, t), &theta, oracle::FD_HESSIAN_STEP)?;
        worst_rel = worst_rel.max((&h - &fd).norm() / h.norm().max(1e-12));
    }
    let pc = base_constants(&mdp, &policy, 0.0)?;
    let (mut grad_ratio, mut hess_ratio) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let a = random_theta(SEED + 800 + i, d, 2.0);
        // Half the pairs are close together, where the constants are tightest.
        let scale = if i % 2 == 0 { 2.0 } else { 0.05 };
        let b = &a + random_theta(SEED + 900 + i, d, scale);
        let dist = (&a - &b).norm();
        let dg = (oracle::exact_policy_gradient(&mdp, &policy, &a)?
            - oracle::exact_policy_gradient(&mdp, &policy, &b)?)
        .norm();
        let dh =
            spectral_norm(&(oracle::exact_hessian(&mdp, &policy, &a)? - oracle::exact_hessian(&mdp, &policy, &b)?));
        grad_ratio = grad_ratio.max(dg / (pc.l * dist));
        hess_ratio = hess_ratio.max(dh / (pc.rho * dist));
    }
    Ok(vec![
        Check::plain(
            TestReport::new("chain2: max relative error of Hessian vs finite differences", worst_rel, 1e-3, 20)
                .with_detail(format!("step {}", oracle::FD_HESSIAN_STEP)),
        ),
        Check::plain(
            TestReport::new("max |grad J(a) - grad J(b)| / (L |a - b|)", grad_ratio, 1.0, 20)
                .with_detail(format!("L = {:.4e}", pc.l)),
        ),
        Check::plain(
            TestReport::new("max |H(a) - H(b)| / (rho |a - b|)", hess_ratio, 1.0, 20)
                .with_detail(format!("rho = {:.4e}", pc.rho)),
        ),
    ])
}

/// `eta(kind) / (estimate + 4 SE)` along the top restricted Hessian
/// eigenvector; at most one when the floor holds.
fn cnc_ratio(
    env_mdp: &TabularMdp,
    floor_mdp: &TabularMdp,
    theta: &Theta,
    kind: GradientKind,
    n: usize,
    seed: u64,
) -> CliResult<(f64, String)> {
    let policy = TabularSoftmax::for_mdp(floor_mdp);
    let dirs = policy.invariant_directions();
    let fisher = oracle::exact_fisher(floor_mdp, &policy, theta)?;
    let l_i = restricted_eigen(&fisher, &dirs)?.0.last().copied().unwrap_or(0.0).max(0.0);
    let eta = base_constants(floor_mdp, &policy, l_i)?.eta(kind);
    let h = oracle::exact_hessian(floor_mdp, &policy, theta)?;
    let (_, vecs) = restricted_eigen(&h, &dirs)?;
    let v = vecs.first().ok_or_else(|| CliError::runtime("empty restricted Hessian"))?;
    let est = cnc_estimate(env_mdp, &policy, theta, kind, v, n, StreamKey::new(seed, 0, 0), exec())?;
    let upper = est.mean + Z_MAX * est.std_err;
    let ratio = if upper > 0.0 { eta / upper } else { f64::INFINITY };
    Ok((ratio, format!("eta {eta:.3e}, estimate {:.3e} +- {:.1e}", est.mean, est.std_err)))
}

fn cnc_floor() -> CliResult<Vec<Check>> {
    let (n_theta, n) = (10, 20_000);
    let mdp = fixtures::chain2();
    let dim = mdp.n_states() * mdp.n_actions();
    let mut out = Vec::new();
    for (j, kind) in GradientKind::ALL.into_iter().enumerate() {
        let mut worst = (0.0f64, String::new());
        for i in 0..n_theta {
            let theta = random_theta(SEED + 1000 + i as u64, dim, 1.0);
            let r = cnc_ratio(&mdp, &mdp, &theta, kind, n, SEED + 1100 + (10 * j + i) as u64)?;
            if r.0 >= worst.0 {
                worst = r;
            }
        }
        out.push(Check::plain(
            TestReport::new(
                format!("chain2 {}: eta / (estimate + 4 SE)", kind.name()),
                worst.0,
                1.0,
                (n_theta * n) as u64,
            )
            .with_detail(format!("worst of {n_theta} theta: {}", worst.1)),
        ));
    }
    Ok(out)
}

fn schedule_builder() -> CliResult<Vec<Check>> {
    let inputs = ScheduleInputs::normalized();
    let delta = 0.1;
    let eps = [0.2, 0.1, 0.05];
    let consts = feasible_constants(&inputs, eps[0], delta, 0.5)?;
    let mut out = Vec::new();
    let mut ks = Vec::new();
    for e in eps {
        let sch = match build_schedule(inputs, e, delta, consts) {
            Ok(s) => s,
            Err(geopg::Error::Infeasible { report: Some(r), .. }) => *r,
            Err(err) => return Err(err.into()),
        };
        let failed: Vec<&str> = sch.constraint_report.iter().filter(|r| !r.holds).map(|r| r.name.as_str()).collect();
        out.push(Check::plain(
            TestReport::new(
                format!("epsilon {e}: failing constraint rows"),
                failed.len() as f64,
                0.0,
                sch.constraint_report.len() as u64,
            )
            .with_detail(if failed.is_empty() {
                format!("K = {:.4e}", sch.big_k_exact)
            } else {
                failed.join("; ")
            }),
        ));
        ks.push(sch.big_k_exact);
    }
    let order = |e: f64| e.powi(-9) * (1.0 / e).ln();
    for w in 0..eps.len() - 1 {
        let observed = ks[w + 1] / ks[w];
        let predicted = order(eps[w + 1]) / order(eps[w]);
        out.push(Check::plain(
            TestReport::new(
                format!("K ratio epsilon {} -> {}: relative deviation", eps[w], eps[w + 1]),
                (observed / predicted - 1.0).abs(),
                0.2,
                2,
            )
            .with_detail(format!("observed {observed:.2}, predicted {predicted:.2}")),
        ));
    }
    Ok(out)
}

fn saddle_escape() -> CliResult<Vec<Check>> {
    let sp = fixtures::saddle_point()?;
    let (top, bottom) = (sp.eigenvalues[0], *sp.eigenvalues.last().expect("two eigenvalues"));
    let mut out = vec![Check::plain(
        TestReport::new(
            "saddle: strict (top eigenvalue > 0 > bottom)",
            if sp.is_strict_saddle() { 0.0 } else { 1.0 },
            0.0,
            1,
        )
        .with_detail(format!("eigenvalues [{top:.4}, {bottom:.4}], |grad J| {:.1e}, J {:.4}", sp.grad_norm, sp.j)),
    )];
    let configs = presets::preset("chain2-saddle")?;
    let runs: Vec<RunResult> = configs.iter().map(execute).collect::<CliResult<_>>()?;
    // Exact J on the unshifted rewards, so the mixed run is comparable.
    let mdp = fixtures::chain2_saddle();
    let policy = fixtures::saddle_policy();
    let js = |r: &RunResult, returned: bool| -> CliResult<Vec<f64>> {
        r.seeds
            .iter()
            .map(|s| {
                let th = if returned { s.output.returned_theta() } else { s.output.final_theta() };
                Ok(oracle::j_theta(&mdp, &policy, &th)?)
            })
            .collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mrpg = js(&runs[0], true)?;
    let rpg = js(&runs[1], false)?;
    let mixed = js(&runs[2], true)?;
    let steps = |r: &RunResult| r.seeds.iter().map(|s| s.output.total_env_steps()).sum::<u64>();
    out.push(Check::plain(
        TestReport::new("mean J: RPG final minus MRPG returned", mean(&rpg) - mean(&mrpg), 0.0, mrpg.len() as u64)
            .with_detail(format!(
                "MRPG {:.4}, RPG {:.4}, saddle {:.4}, env steps {} vs {}",
                mean(&mrpg),
                mean(&rpg),
                sp.j,
                steps(&runs[0]),
                steps(&runs[1])
            ))
            .with_seeds(runs[0].config.seeds.clone()),
    ));
    let diffs: Vec<f64> = mrpg.iter().zip(&mixed).map(|(a, b)| a - b).collect();
    let wins = diffs.iter().filter(|d| **d >= 0.0).count();
    out.push(Check::plain(
        TestReport::new(
            "seed-paired mean J: mixed-sign minus strict-sign MRPG",
            -mean(&diffs),
            0.0,
            diffs.len() as u64,
        )
        .with_detail(format!(
            "strict {:.4}, mixed {:.4}, strict >= mixed in {wins}/{} seeds",
            mean(&mrpg),
            mean(&mixed),
            diffs.len()
        ))
        .with_seeds(runs[0].config.seeds.clone()),
    ));
    Ok(out)
}

/// Least-squares slope of `ys` against `xs`.
fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn pendulum() -> CliResult<Vec<Check>> {
    let config = presets::preset("pendulum-paper")?.swap_remove(0);
    let result = execute(&config)?;
    let curves: Vec<Vec<(f64, f64)>> = result
        .seeds
        .iter()
        .map(|s| {
            s.output.records.iter().filter_map(|r: &RunRecord| Some((r.iteration as f64, r.return_estimate?))).collect()
        })
        .collect();
    let xs: Vec<f64> = curves[0].iter().map(|p| p.0).collect();
    let slopes: Vec<f64> = curves.iter().map(|c| ols_slope(&xs, &c.iter().map(|p| p.1).collect::<Vec<_>>())).collect();
    let (m, sd) = crate::output::mean_std(&slopes);
    let t = m / (sd / (slopes.len() as f64).sqrt());
    let mean_curve: Vec<f64> =
        (0..xs.len()).map(|i| curves.iter().map(|c| c[i].1).sum::<f64>() / curves.len() as f64).collect();
    let n = mean_curve.len();
    let q = (n / 4).max(1);
    let head = mean_curve[..q].iter().sum::<f64>() / q as f64;
    let tail = mean_curve[n - q..].iter().sum::<f64>() / q as f64;
    let curve_text: Vec<String> = mean_curve.iter().map(|v| format!("{v:.1}")).collect();
    let mut out = vec![
        Check::plain(
            TestReport::new("per-seed return slope: -(mean / SE)", -t, -2.0, slopes.len() as u64)
                .with_detail(format!("mean slope {m:.4e} per iteration, t = {t:.2}"))
                .with_seeds(config.seeds.clone()),
        ),
        Check::plain(
            TestReport::new("mean return: first quarter minus last quarter", head - tail, 0.0, n as u64)
                .with_detail(format!("curve {}", curve_text.join(" "))),
        ),
    ];
    // Rewards observed along rollouts of every seed's final policy.
    let env = PendulumEnv::default();
    let policy = TruncGaussMlp::<geopg::mdp::PendulumState>::standard(env.torque_limit)?;
    let (lo, hi) = (-17.173_604_4, -0.5);
    let ranges = map_indexed(result.seeds.len(), exec(), |i| -> (f64, f64, u64) {
        let theta = result.seeds[i].output.final_theta();
        let mut rng = StreamKey::new(result.seeds[i].seed, 0, 0).rng(Purpose::Auxiliary(2));
        let (mut rmin, mut rmax, mut bad) = (f64::INFINITY, f64::NEG_INFINITY, 0);
        for _ in 0..10 {
            let mut s = env.start_state(&mut rng).expect("pendulum start");
            for _ in 0..200 {
                let a = policy.sample(&theta, &s, &mut rng).expect("finite theta");
                let (next, r) = env.step(&s, &a, &mut rng).expect("pendulum step");
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                bad += u64::from(!(lo..=hi).contains(&r));
                s = next;
            }
        }
        (rmin, rmax, bad)
    });
    let bad: u64 = ranges.iter().map(|r| r.2).sum();
    let rmin = ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let rmax = ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    out.push(Check::plain(
        TestReport::new("rewards outside [-17.1736044, -0.5]", bad as f64, 0.0, (ranges.len() * 2000) as u64)
            .with_detail(format!("observed [{rmin:.4}, {rmax:.4}]")),
    ));
    Ok(out)
}

/// Biased Q estimate: the rollout is cut after at most two steps.
fn truncated_q_samples(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Theta,
    n: usize,
) -> CliResult<Vec<DVector<f64>>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    Ok(try_map_indexed(n, exec(), |i| -> geopg::Result<DVector<f64>> {
        let mut v = DVector::zeros(ns * na);
        for s in 0..ns {
            for a in 0..na {
                let key = StreamKey::new(SEED + 1, (s * na + a) as u64, i as u64);
                let h = geopg::mdp::sample_geometric(1.0 - mdp.gamma().sqrt(), &mut key.rng(Purpose::QHorizon))?;
                v[s * na + a] =
                    est_q_with_horizon(mdp, policy, theta, &s, &a, h.min(2), &mut key.rng(Purpose::QRollout))?;
            }
        }
        Ok(v)
    })?)
}

fn controls() -> CliResult<Vec<Check>> {
    let n = 100_000;
    let mdp = fixtures::chain2();
    let policy = TabularSoftmax::for_mdp(&mdp);
    let theta = random_theta(SEED, policy.dim(), 1.0);
    let exact = oracle::exact_values(&mdp, &policy, &theta)?.q;
    let exact = DVector::from_fn(exact.len(), |i, _| exact[(i / mdp.n_actions(), i % mdp.n_actions())]);
    let samples = truncated_q_samples(&mdp, &policy, &theta, n)?;
    let mut out = vec![Check::control(unbiasedness_test(
        "control: truncated-horizon Q_hat vs exact Q",
        &samples,
        &exact,
        Z_MAX,
    )?)];
    let biased =
        gradient_reports("control: biased chain2", &mdp, &theta, GradientKind::QHat, n, SEED + 2, INJECTED_BIAS)?;
    out.push(Check::control(biased.into_iter().next().expect("z report first")));
    // Zero rewards give zero gradients, which cannot meet the floor of the
    // positive-reward problem.
    let zero = TabularMdp::new(
        2,
        2,
        (0..8).map(|i| mdp.p(i / 4, (i / 2) % 2, i % 2)).collect(),
        vec![0.0; 4],
        mdp.gamma(),
        0,
    )?;
    let (ratio, detail) = cnc_ratio(&zero, &mdp, &theta, GradientKind::QHat, 2_000, SEED + 3)?;
    out.push(Check::control(
        TestReport::new("control: zero-reward chain2 vs CNC floor", ratio, 1.0, 2_000).with_detail(detail),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suite_omits_optimisation_runs() {
        let ids = suite_ids(Suite::Fast);
        assert!(!ids.contains(&4) && !ids.contains(&10) && !ids.contains(&11));
        assert_eq!(suite_ids(Suite::Full).len(), CRITERIA.len());
    }

    #[test]
    fn controls_fail_as_designed() {
        let r = run_criterion(0, &VerifyOptions::new(Suite::Fast)).unwrap();
        assert!(r.ok(), "{}", render(std::slice::from_ref(&r)));
        assert!(r.checks.iter().all(|c| c.control && !c.report.pass));
    }

    #[test]
    fn injected_bias_breaks_gradient_check() {
        let opts = VerifyOptions { suite: Suite::Fast, inject_bias: true };
        assert!(!run_criterion(2, &opts).unwrap().ok());
    }

    #[test]
    fn schedule_and_offset_checks_pass() {
        let opts = VerifyOptions::new(Suite::Fast);
        for id in [6, 9] {
            let r = run_criterion(id, &opts).unwrap();
            assert!(r.ok(), "{}", render(&[r]));
        }
    }
}
