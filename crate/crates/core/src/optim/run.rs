//! The RPG and MRPG ascent loops.

use super::schedule::MrpgPlan;
use super::stepsize::StepsizeSchedule;
use crate::error::{Error, Result};
use crate::estimators::{eval_pg, GradientKind};
use crate::mdp::{Environment, TabularMdp};
use crate::oracle;
use crate::policy::{Policy, Theta};
use crate::rng::{Purpose, StreamKey};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How much of each iterate is written to the record stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    /// Scalars and a hash of `theta`.
    #[default]
    Summary,
    /// Also the full `theta` and gradient vectors.
    Full,
}

/// Seed, estimator and logging options shared by both loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    /// Distinguishes independent runs that share a seed.
    pub run: u64,
    pub kind: GradientKind,
    pub log: LogLevel,
    /// The monitor is consulted every this many iterations, and at the end.
    pub monitor_every: u64,
    /// Estimates averaged into each step; 1 is the plain single-sample update.
    #[serde(default = "one")]
    pub batch: u64,
}

fn one() -> u64 {
    1
}

impl RunOptions {
    pub fn new(seed: u64, kind: GradientKind) -> Self {
        RunOptions { seed, run: 0, kind, log: LogLevel::Summary, monitor_every: 1, batch: 1 }
    }

    /// Key of the `i`-th estimate of iteration `k`.
    fn estimate_key(&self, k: u64, i: u64) -> StreamKey {
        StreamKey::new(self.seed, self.run, k * self.batch + i)
    }
}

/// Quantities a monitor reports for one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub exact_j: Option<f64>,
    pub exact_grad_norm_sq: Option<f64>,
    pub return_estimate: Option<f64>,
}

/// Evaluates iterates on the side without touching the run's random streams.
pub trait Monitor: Sync {
    fn observe(&self, k: u64, theta: &Theta) -> Result<Observation>;
}

/// Reports nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoMonitor;

impl Monitor for NoMonitor {
    fn observe(&self, _k: u64, _theta: &Theta) -> Result<Observation> {
        Ok(Observation::default())
    }
}

/// Exact `J(theta)` and `||grad J(theta)||^2` from dynamic programming.
pub struct TabularMonitor<'a, P> {
    pub mdp: &'a TabularMdp,
    pub policy: &'a P,
}

impl<'a, P: Policy<usize, usize>> Monitor for TabularMonitor<'a, P> {
    fn observe(&self, _k: u64, theta: &Theta) -> Result<Observation> {
        let sol = oracle::exact_values(self.mdp, self.policy, theta)?;
        let grad = oracle::gradient_from(self.mdp, self.policy, theta, &sol, &sol.q)?;
        Ok(Observation {
            exact_j: Some(sol.j_theta),
            exact_grad_norm_sq: Some(grad.norm_squared()),
            return_estimate: Some(sol.j_theta),
        })
    }
}

/// Mean discounted return of `episodes` rollouts truncated at `horizon`
/// steps. Episode `e` uses the same auxiliary stream at every iteration
/// (common random numbers), so the curve is reproducible, independent of the
/// optimisation noise, and not jittered by fresh start states.
pub struct RolloutReturnMonitor<'a, E, P> {
    pub env: &'a E,
    pub policy: &'a P,
    pub episodes: u64,
    pub horizon: u64,
    pub seed: u64,
}

impl<'a, E, P> Monitor for RolloutReturnMonitor<'a, E, P>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    fn observe(&self, _k: u64, theta: &Theta) -> Result<Observation> {
        let gamma = self.env.gamma();
        let mut total = 0.0;
        for e in 0..self.episodes {
            let mut rng = StreamKey::new(self.seed, e, 0).rng(Purpose::Auxiliary(1));
            let mut s = self.env.start_state(&mut rng)?;
            let mut disc = 1.0;
            for _ in 0..self.horizon {
                let a = self.policy.sample(theta, &s, &mut rng)?;
                let (next, r) = self.env.step(&s, &a, &mut rng)?;
                total += disc * r;
                disc *= gamma;
                s = next;
            }
        }
        Ok(Observation { return_estimate: Some(total / self.episodes.max(1) as f64), ..Observation::default() })
    }
}

/// One logged iterate. Record `k` holds `theta_k` and, except for the final
/// record, the step `theta_{k+1} - theta_k = stepsize * g_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: u64,
    pub stepsize: Option<f64>,
    pub grad_norm: Option<f64>,
    /// Environment transitions spent on the estimate.
    pub env_steps: Option<u64>,
    pub exact_j: Option<f64>,
    pub exact_grad_norm_sq: Option<f64>,
    pub return_estimate: Option<f64>,
    /// Member of the MRPG checkpoint set.
    pub checkpoint: bool,
    pub theta_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
}

/// FNV-1a over the little-endian bytes of every entry.
pub fn theta_hash(theta: &Theta) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in theta.iter() {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Records and final parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    /// `theta` after the last update.
    pub final_theta: Vec<f64>,
    /// The parameters the algorithm outputs: the final iterate for RPG, a
    /// uniformly drawn checkpoint for MRPG.
    pub returned_theta: Vec<f64>,
    /// Iteration index of `returned_theta`.
    pub returned_iteration: u64,
}

impl RunOutput {
    pub fn final_theta(&self) -> Theta {
        Theta::from_column_slice(&self.final_theta)
    }

    pub fn returned_theta(&self) -> Theta {
        Theta::from_column_slice(&self.returned_theta)
    }

    pub fn total_env_steps(&self) -> u64 {
        self.records.iter().filter_map(|r| r.env_steps).sum()
    }
}

#[allow(clippy::too_many_arguments)]
fn ascend<E, P, M>(
    env: &E,
    policy: &P,
    theta0: &Theta,
    iterations: u64,
    opts: &RunOptions,
    monitor: &M,
    step_at: impl Fn(u64) -> f64,
    checkpoint_at: impl Fn(u64) -> bool,
) -> Result<Ascent>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    M: Monitor + ?Sized,
{
    policy.check_theta(theta0)?;
    if iterations == 0 {
        return Err(Error::param("a run needs at least one iteration"));
    }
    if opts.monitor_every == 0 {
        return Err(Error::param("monitor_every must be at least 1"));
    }
    if opts.batch == 0 {
        return Err(Error::param("batch must be at least 1"));
    }
    let full = opts.log == LogLevel::Full;
    let mut theta = theta0.clone();
    let mut records = Vec::with_capacity(usize::try_from(iterations).unwrap_or(0).saturating_add(1).min(1 << 24));
    let mut checkpoints = Vec::new();
    for k in 0..=iterations {
        let last = k == iterations;
        let obs =
            if last || k % opts.monitor_every == 0 { monitor.observe(k, &theta)? } else { Observation::default() };
        let checkpoint = checkpoint_at(k);
        if checkpoint {
            checkpoints.push((k, theta.clone()));
        }
        let mut rec = RunRecord {
            iteration: k,
            stepsize: None,
            grad_norm: None,
            env_steps: None,
            exact_j: obs.exact_j,
            exact_grad_norm_sq: obs.exact_grad_norm_sq,
            return_estimate: obs.return_estimate,
            checkpoint,
            theta_hash: theta_hash(&theta),
            theta: full.then(|| theta.iter().copied().collect()),
            gradient: None,
        };
        if !last {
            let mut g = Theta::zeros(theta.len());
            let mut steps = 0;
            for i in 0..opts.batch {
                let est = eval_pg(opts.kind, env, policy, &theta, opts.estimate_key(k, i))?;
                g += &est.vector;
                steps += est.meta.env_steps();
            }
            g /= opts.batch as f64;
            let alpha = step_at(k);
            rec.stepsize = Some(alpha);
            rec.grad_norm = Some(g.norm());
            rec.env_steps = Some(steps);
            if full {
                rec.gradient = Some(g.iter().copied().collect());
            }
            theta.axpy(alpha, &g, 1.0);
            if theta.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("theta became non-finite at iteration {k}")));
            }
        }
        records.push(rec);
    }
    Ok((records, theta, checkpoints))
}

/// Records, final iterate and checkpoints `(iteration, theta)` of one ascent.
type Ascent = (Vec<RunRecord>, Theta, Vec<(u64, Theta)>);

/// Random-horizon policy gradient: `theta_{k+1} = theta_k + alpha_k g_k` with
/// one estimate per iteration.
pub fn rpg_run<E, P, M>(
    env: &E,
    policy: &P,
    theta0: &Theta,
    schedule: &StepsizeSchedule,
    iterations: u64,
    opts: &RunOptions,
    monitor: &M,
) -> Result<RunOutput>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    M: Monitor + ?Sized,
{
    schedule.validate()?;
    let (records, theta, _) = ascend(env, policy, theta0, iterations, opts, monitor, |k| schedule.at(k), |_| false)?;
    let v: Vec<f64> = theta.iter().copied().collect();
    Ok(RunOutput { records, final_theta: v.clone(), returned_theta: v, returned_iteration: iterations })
}

/// Modified RPG: the large step `beta` on every `k_thre`-th iteration (whose
/// iterate is checkpointed), `alpha` otherwise; the output is a checkpoint
/// drawn uniformly at random.
pub fn mrpg_run<E, P, M>(
    env: &E,
    policy: &P,
    theta0: &Theta,
    plan: &MrpgPlan,
    opts: &RunOptions,
    monitor: &M,
) -> Result<RunOutput>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    M: Monitor + ?Sized,
{
    plan.validate()?;
    let kt = plan.k_thre;
    let (records, theta, checkpoints) = ascend(
        env,
        policy,
        theta0,
        plan.iterations,
        opts,
        monitor,
        |k| if k % kt == 0 { plan.beta } else { plan.alpha },
        |k| k % kt == 0,
    )?;
    let mut rng = StreamKey::new(opts.seed, opts.run, 0).rng(Purpose::CheckpointDraw);
    let (returned_iteration, returned) = &checkpoints[rng.random_range(0..checkpoints.len())];
    Ok(RunOutput {
        records,
        final_theta: theta.iter().copied().collect(),
        returned_theta: returned.iter().copied().collect(),
        returned_iteration: *returned_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TabularSoftmax;

    fn chain() -> TabularMdp {
        let transition = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        TabularMdp::new(2, 2, transition, vec![1.0, 0.5, 0.2, 0.8], 0.9, 0).unwrap()
    }

    fn full_opts(seed: u64) -> RunOptions {
        RunOptions { log: LogLevel::Full, ..RunOptions::new(seed, GradientKind::QHat) }
    }

    #[test]
    fn update_identity_replays_from_log() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let theta0 = Theta::zeros(4);
        let out =
            rpg_run(&mdp, &pol, &theta0, &StepsizeSchedule::Diminishing { a: 0.5 }, 50, &full_opts(3), &NoMonitor)
                .unwrap();
        assert_eq!(out.records.len(), 51);
        for w in out.records.windows(2) {
            let t0 = Theta::from_vec(w[0].theta.clone().unwrap());
            let t1 = Theta::from_vec(w[1].theta.clone().unwrap());
            let g = Theta::from_vec(w[0].gradient.clone().unwrap());
            let mut replay = t0.clone();
            replay.axpy(w[0].stepsize.unwrap(), &g, 1.0);
            assert_eq!(replay, t1);
        }
        assert_eq!(out.final_theta, out.records.last().unwrap().theta.clone().unwrap());
    }

    #[test]
    fn runs_are_deterministic() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let mon = TabularMonitor { mdp: &mdp, policy: &pol };
        let theta0 = Theta::zeros(4);
        let s = StepsizeSchedule::Constant { alpha: 0.05 };
        let a = rpg_run(&mdp, &pol, &theta0, &s, 30, &RunOptions::new(9, GradientKind::AdvTd), &mon).unwrap();
        let b = rpg_run(&mdp, &pol, &theta0, &s, 30, &RunOptions::new(9, GradientKind::AdvTd), &mon).unwrap();
        assert_eq!(a, b);
        assert!(a.records.iter().all(|r| r.exact_j.is_some()));
    }

    #[test]
    fn mrpg_step_pattern_and_checkpoints() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let plan = MrpgPlan { alpha: 0.01, beta: 0.1, k_thre: 7, iterations: 50, truncated: false };
        let out = mrpg_run(&mdp, &pol, &Theta::zeros(4), &plan, &full_opts(1), &NoMonitor).unwrap();
        for r in &out.records {
            assert_eq!(r.checkpoint, r.iteration % 7 == 0);
            if let Some(step) = r.stepsize {
                assert_eq!(step, if r.iteration % 7 == 0 { 0.1 } else { 0.01 });
            }
        }
        let n_ck = out.records.iter().filter(|r| r.checkpoint).count() as u64;
        assert_eq!(n_ck, 50 / 7 + 1);
        assert_eq!(out.returned_iteration % 7, 0);
        let rec = &out.records[out.returned_iteration as usize];
        assert_eq!(rec.theta.as_ref().unwrap(), &out.returned_theta);
    }

    #[test]
    fn batched_step_is_mean_of_keyed_estimates() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let theta0 = Theta::from_vec(vec![0.3, -0.2, 0.1, 0.4]);
        let opts = RunOptions { batch: 3, ..full_opts(5) };
        let s = StepsizeSchedule::Constant { alpha: 1.0 };
        let out = rpg_run(&mdp, &pol, &theta0, &s, 2, &opts, &NoMonitor).unwrap();
        for k in 0..2u64 {
            let theta = Theta::from_vec(out.records[k as usize].theta.clone().unwrap());
            let mut mean = Theta::zeros(4);
            for i in 0..3 {
                mean +=
                    eval_pg(GradientKind::QHat, &mdp, &pol, &theta, StreamKey::new(5, 0, k * 3 + i)).unwrap().vector;
            }
            mean /= 3.0;
            let logged = Theta::from_vec(out.records[k as usize].gradient.clone().unwrap());
            assert!((logged - mean).norm() < 1e-12);
        }
        let zero = RunOptions { batch: 0, ..full_opts(5) };
        assert!(rpg_run(&mdp, &pol, &theta0, &s, 2, &zero, &NoMonitor).is_err());
    }

    #[test]
    fn k_thre_one_is_constant_beta() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let plan = MrpgPlan { alpha: 0.01, beta: 0.05, k_thre: 1, iterations: 20, truncated: false };
        let out =
            mrpg_run(&mdp, &pol, &Theta::zeros(4), &plan, &RunOptions::new(2, GradientKind::QHat), &NoMonitor).unwrap();
        assert!(out.records.iter().all(|r| r.checkpoint));
        let rpg = rpg_run(
            &mdp,
            &pol,
            &Theta::zeros(4),
            &StepsizeSchedule::Constant { alpha: 0.05 },
            20,
            &RunOptions::new(2, GradientKind::QHat),
            &NoMonitor,
        )
        .unwrap();
        assert_eq!(out.final_theta, rpg.final_theta);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let s = StepsizeSchedule::Constant { alpha: 0.1 };
        let o = RunOptions::new(0, GradientKind::QHat);
        assert!(rpg_run(&mdp, &pol, &Theta::zeros(4), &s, 0, &o, &NoMonitor).is_err());
        assert!(rpg_run(&mdp, &pol, &Theta::zeros(3), &s, 5, &o, &NoMonitor).is_err());
    }

    #[test]
    fn hash_distinguishes_signed_zero() {
        assert_ne!(theta_hash(&Theta::from_vec(vec![0.0])), theta_hash(&Theta::from_vec(vec![-0.0])));
    }
}
