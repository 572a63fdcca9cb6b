//! Unbiased random-horizon estimates of Q, V and the policy gradient.

use crate::error::{Error, Result};
use crate::mdp::{rollout_to_occupancy_sample, sample_geometric, Environment};
use crate::par::{try_map_indexed, Execution};
use crate::policy::{Policy, Theta};
use crate::rng::{Purpose, StreamKey};
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which stochastic policy gradient to form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    /// `Q_hat(s_T, a_T) * score / (1 - gamma)`.
    QHat,
    /// `(Q_hat - V_hat(s_T)) * score / (1 - gamma)` with independent rollouts.
    AdvDiff,
    /// `(R(s_T, a_T) + gamma V_hat(s'_T) - V_hat(s_T)) * score / (1 - gamma)`.
    AdvTd,
}

impl GradientKind {
    pub const ALL: [GradientKind; 3] = [GradientKind::QHat, GradientKind::AdvDiff, GradientKind::AdvTd];

    pub fn name(self) -> &'static str {
        match self {
            GradientKind::QHat => "q_hat",
            GradientKind::AdvDiff => "adv_diff",
            GradientKind::AdvTd => "adv_td",
        }
    }
}

impl std::str::FromStr for GradientKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_hat" | "qhat" => Ok(GradientKind::QHat),
            "adv_diff" | "advdiff" => Ok(GradientKind::AdvDiff),
            "adv_td" | "advtd" => Ok(GradientKind::AdvTd),
            other => Err(Error::Config(format!("unknown gradient kind {other:?}"))),
        }
    }
}

/// A rollout estimate together with the horizon that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonValue {
    pub value: f64,
    pub horizon: u64,
}

/// `sum_{t=0}^{horizon} gamma^{t/2} R(s_t, a_t)` from `(s_0, a_0) = (state, action)`.
pub fn est_q_with_horizon<E, P, R>(
    env: &E,
    policy: &P,
    theta: &Theta,
    state: &E::State,
    action: &E::Action,
    horizon: u64,
    rng: &mut R,
) -> Result<f64>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    R: Rng + ?Sized,
{
    let half = env.gamma().sqrt();
    let mut disc = 1.0;
    let mut total = env.reward(state, action)?;
    if horizon == 0 {
        return Ok(total);
    }
    let mut s = env.transition(state, action, rng)?;
    let mut t = 1;
    loop {
        let a = policy.sample(theta, &s, rng)?;
        disc *= half;
        total += disc * env.reward(&s, &a)?;
        if t == horizon {
            return Ok(total);
        }
        s = env.transition(&s, &a, rng)?;
        t += 1;
    }
}

/// Q estimate with `T' ~ Geom(1 - sqrt(gamma))`.
pub fn est_q<E, P, R1, R2>(
    env: &E,
    policy: &P,
    theta: &Theta,
    state: &E::State,
    action: &E::Action,
    horizon_rng: &mut R1,
    rollout_rng: &mut R2,
) -> Result<HorizonValue>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let horizon = sample_geometric(1.0 - env.gamma().sqrt(), horizon_rng)?;
    let value = est_q_with_horizon(env, policy, theta, state, action, horizon, rollout_rng)?;
    Ok(HorizonValue { value, horizon })
}

/// V estimate: [`est_q`] at `a_0 ~ pi_theta(. | state)`.
pub fn est_v<E, P, R1, R2>(
    env: &E,
    policy: &P,
    theta: &Theta,
    state: &E::State,
    horizon_rng: &mut R1,
    rollout_rng: &mut R2,
) -> Result<HorizonValue>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let horizon = sample_geometric(1.0 - env.gamma().sqrt(), horizon_rng)?;
    let action = policy.sample(theta, state, rollout_rng)?;
    let value = est_q_with_horizon(env, policy, theta, state, &action, horizon, rollout_rng)?;
    Ok(HorizonValue { value, horizon })
}

/// Everything drawn while forming one gradient estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta<S, A> {
    /// `T`, the occupancy horizon.
    pub horizon: u64,
    pub state: S,
    pub action: A,
    pub q_hat: Option<HorizonValue>,
    pub v_hat: Option<HorizonValue>,
    pub v_hat_next: Option<HorizonValue>,
    pub next_state: Option<S>,
    /// The scalar multiplying `score / (1 - gamma)`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate<S, A> {
    pub kind: GradientKind,
    pub vector: DVector<f64>,
    pub meta: EstimateMeta<S, A>,
}

impl<S, A> EstimateMeta<S, A> {
    /// Environment transitions simulated to form the estimate.
    pub fn env_steps(&self) -> u64 {
        let rollout = |h: &Option<HorizonValue>| h.map_or(0, |h| h.horizon);
        self.horizon
            + rollout(&self.q_hat)
            + rollout(&self.v_hat)
            + rollout(&self.v_hat_next)
            + u64::from(self.next_state.is_some())
    }
}

impl<S, A> GradientEstimate<S, A> {
    /// Fails when `||g||` exceeds `bound` (up to rounding).
    pub fn check_bound(&self, bound: f64) -> Result<()> {
        let n = self.vector.norm();
        if n > bound * (1.0 + 1e-12) {
            return Err(Error::numeric(format!(
                "{:?} estimate has norm {n}, above its almost-sure bound {bound}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// The streams one gradient estimate draws from, all distinct.
pub const ESTIMATE_STREAMS: [Purpose; 9] = [
    Purpose::OccupancyHorizon,
    Purpose::OuterTrajectory,
    Purpose::QHorizon,
    Purpose::QRollout,
    Purpose::VHorizon,
    Purpose::VRollout,
    Purpose::NextState,
    Purpose::VNextHorizon,
    Purpose::VNextRollout,
];

/// One stochastic policy gradient at `theta`. Every random quantity comes from
/// its own stream derived from `key`.
pub fn eval_pg<E, P>(
    kind: GradientKind,
    env: &E,
    policy: &P,
    theta: &Theta,
    key: StreamKey,
) -> Result<GradientEstimate<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    let gamma = env.gamma();
    let smp = rollout_to_occupancy_sample(
        env,
        policy,
        theta,
        &mut key.rng(Purpose::OccupancyHorizon),
        &mut key.rng(Purpose::OuterTrajectory),
    )?;
    let (s, a) = (&smp.state, &smp.action);
    let q_of = || est_q(env, policy, theta, s, a, &mut key.rng(Purpose::QHorizon), &mut key.rng(Purpose::QRollout));
    let v_of = || est_v(env, policy, theta, s, &mut key.rng(Purpose::VHorizon), &mut key.rng(Purpose::VRollout));
    let mut meta = EstimateMeta {
        horizon: smp.horizon,
        state: s.clone(),
        action: a.clone(),
        q_hat: None,
        v_hat: None,
        v_hat_next: None,
        next_state: None,
        weight: 0.0,
    };
    meta.weight = match kind {
        GradientKind::QHat => {
            let q = q_of()?;
            meta.q_hat = Some(q);
            q.value
        }
        GradientKind::AdvDiff => {
            let q = q_of()?;
            let v = v_of()?;
            meta.q_hat = Some(q);
            meta.v_hat = Some(v);
            q.value - v.value
        }
        GradientKind::AdvTd => {
            let r = env.reward(s, a)?;
            let next = env.transition(s, a, &mut key.rng(Purpose::NextState))?;
            let v_next = est_v(
                env,
                policy,
                theta,
                &next,
                &mut key.rng(Purpose::VNextHorizon),
                &mut key.rng(Purpose::VNextRollout),
            )?;
            let v = v_of()?;
            meta.v_hat = Some(v);
            meta.v_hat_next = Some(v_next);
            meta.next_state = Some(next);
            r + gamma * v_next.value - v.value
        }
    };
    let score = policy.score(theta, s, a)?;
    let vector = score * (meta.weight / (1.0 - gamma));
    if vector.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite gradient estimate"));
    }
    Ok(GradientEstimate { kind, vector, meta })
}

/// `n` independent estimates, the `i`-th drawn from `key.with_index(first + i)`.
pub fn eval_pg_batch<E, P>(
    kind: GradientKind,
    env: &E,
    policy: &P,
    theta: &Theta,
    key: StreamKey,
    n: usize,
    exec: Execution,
) -> Result<Vec<GradientEstimate<E::State, E::Action>>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    let first = key.index;
    try_map_indexed(n, exec, |i| eval_pg(kind, env, policy, theta, key.with_index(first + i as u64)))
}

/// JSONL-friendly view of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub kind: GradientKind,
    pub vector: Vec<f64>,
    pub horizon: u64,
    pub q_hat: Option<HorizonValue>,
    pub v_hat: Option<HorizonValue>,
    pub v_hat_next: Option<HorizonValue>,
    pub weight: f64,
}

impl<S, A> From<&GradientEstimate<S, A>> for EstimateRecord {
    fn from(g: &GradientEstimate<S, A>) -> Self {
        EstimateRecord {
            kind: g.kind,
            vector: g.vector.iter().copied().collect(),
            horizon: g.meta.horizon,
            q_hat: g.meta.q_hat,
            v_hat: g.meta.v_hat,
            v_hat_next: g.meta.v_hat_next,
            weight: g.meta.weight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::TabularMdp;
    use crate::policy::TabularSoftmax;
    use crate::rng::seeded;
    use std::collections::HashSet;

    fn constant_reward(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(2, 2, vec![0.5, 0.5, 0.2, 0.8, 1.0, 0.0, 0.3, 0.7], vec![r; 4], gamma, 0).unwrap()
    }

    #[test]
    fn zero_horizon_is_one_reward() {
        let mdp = TabularMdp::new(2, 2, vec![0.5; 8], vec![1.0, 2.0, 3.0, 4.0], 0.5, 0).unwrap();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let q = est_q_with_horizon(&mdp, &pi, &Theta::zeros(4), &1, &0, 0, &mut seeded(0)).unwrap();
        assert_eq!(q, 3.0);
    }

    #[test]
    fn constant_reward_q_is_partial_geometric_sum() {
        let (r, gamma) = (1.5, 0.81);
        let mdp = constant_reward(r, gamma);
        let pi = TabularSoftmax::for_mdp(&mdp);
        let half = gamma.sqrt();
        let (mut hr, mut rr) = (seeded(1), seeded(2));
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let q = est_q(&mdp, &pi, &Theta::zeros(4), &0, &1, &mut hr, &mut rr).unwrap();
            let closed = r * (1.0 - half.powi(q.horizon as i32 + 1)) / (1.0 - half);
            assert!((q.value - closed).abs() < 1e-12);
            sum += q.value;
        }
        let mean = sum / n as f64;
        assert!((mean - r / (1.0 - gamma)).abs() < 0.02 * r / (1.0 - gamma));
    }

    #[test]
    fn zero_score_gives_zero_vector() {
        // One action: the score is identically zero.
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 2.0], 0.9, 0).unwrap();
        let pi = TabularSoftmax::for_mdp(&mdp);
        for kind in GradientKind::ALL {
            let g = eval_pg(kind, &mdp, &pi, &Theta::zeros(2), StreamKey::new(1, 2, 3)).unwrap();
            assert!(g.vector.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn single_action_v_equals_q() {
        let mdp = TabularMdp::new(2, 1, vec![0.3, 0.7, 0.6, 0.4], vec![1.0, -2.0], 0.9, 0).unwrap();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let theta = Theta::zeros(2);
        let n = 10_000;
        let mut qs: Vec<f64> = (0..n)
            .map(|i| {
                let k = StreamKey::new(5, 0, i);
                est_q(&mdp, &pi, &theta, &0, &0, &mut k.rng(Purpose::QHorizon), &mut k.rng(Purpose::QRollout))
                    .unwrap()
                    .value
            })
            .collect();
        let mut vs: Vec<f64> = (0..n)
            .map(|i| {
                let k = StreamKey::new(6, 0, i);
                est_v(&mdp, &pi, &theta, &0, &mut k.rng(Purpose::VHorizon), &mut k.rng(Purpose::VRollout))
                    .unwrap()
                    .value
            })
            .collect();
        qs.sort_by(f64::total_cmp);
        vs.sort_by(f64::total_cmp);
        // Two-sample Kolmogorov-Smirnov distance on the merged support.
        let (mut i, mut j, mut ks) = (0usize, 0usize, 0.0f64);
        while i < qs.len() && j < vs.len() {
            let x = qs[i].min(vs[j]);
            while i < qs.len() && qs[i] <= x {
                i += 1;
            }
            while j < vs.len() && vs[j] <= x {
                j += 1;
            }
            ks = ks.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(ks <= 0.02, "KS {ks}");
    }

    #[test]
    fn streams_are_pairwise_distinct() {
        let key = StreamKey::new(1, 2, 3);
        let seeds: HashSet<_> = ESTIMATE_STREAMS.iter().map(|p| key.stream_seed(*p)).collect();
        assert_eq!(seeds.len(), ESTIMATE_STREAMS.len());
    }

    #[test]
    fn batch_is_deterministic_across_execution_modes() {
        let mdp = constant_reward(1.0, 0.9).reshaped(0.0);
        let pi = TabularSoftmax::for_mdp(&mdp);
        let theta = Theta::from_column_slice(&[0.3, -0.2, 0.1, 0.5]);
        let key = StreamKey::new(4, 0, 0);
        let a = eval_pg_batch(GradientKind::AdvTd, &mdp, &pi, &theta, key, 200, Execution::Sequential).unwrap();
        let b = eval_pg_batch(GradientKind::AdvTd, &mdp, &pi, &theta, key, 200, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn record_round_trips_through_json() {
        let mdp = constant_reward(1.0, 0.9);
        let pi = TabularSoftmax::for_mdp(&mdp);
        let g = eval_pg(GradientKind::AdvDiff, &mdp, &pi, &Theta::zeros(4), StreamKey::new(0, 0, 0)).unwrap();
        let rec = EstimateRecord::from(&g);
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<EstimateRecord>(&line).unwrap(), rec);
    }

    #[test]
    fn kind_parses() {
        for k in GradientKind::ALL {
            assert_eq!(k.name().parse::<GradientKind>().unwrap(), k);
        }
    }
}
