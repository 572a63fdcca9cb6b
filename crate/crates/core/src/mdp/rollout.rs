use super::{sample_geometric, Environment};
use crate::error::Result;
use crate::policy::{Policy, Theta};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// States, actions and rewards at times `0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace<S, A> {
    pub states: Vec<S>,
    pub actions: Vec<A>,
    pub rewards: Vec<f64>,
    pub horizon: u64,
}

/// A draw `(s_T, a_T)` from the discounted occupancy measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySample<S, A> {
    pub state: S,
    pub action: A,
    pub horizon: u64,
}

/// Simulates `horizon` transitions from `start`. The first action is `first`
/// when given, otherwise sampled from the policy like every later one.
pub fn rollout<E, P, R>(
    env: &E,
    policy: &P,
    theta: &Theta,
    start: E::State,
    first: Option<E::Action>,
    horizon: u64,
    rng: &mut R,
) -> Result<RolloutTrace<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    R: Rng + ?Sized,
{
    let cap = usize::try_from(horizon).unwrap_or(usize::MAX).saturating_add(1).min(1 << 20);
    let mut trace = RolloutTrace {
        states: Vec::with_capacity(cap),
        actions: Vec::with_capacity(cap),
        rewards: Vec::with_capacity(cap),
        horizon,
    };
    let mut state = start;
    let mut action = match first {
        Some(a) => a,
        None => policy.sample(theta, &state, rng)?,
    };
    for t in 0..=horizon {
        trace.rewards.push(env.reward(&state, &action)?);
        if t == horizon {
            trace.states.push(state);
            trace.actions.push(action);
            break;
        }
        let next = env.transition(&state, &action, rng)?;
        trace.states.push(state);
        trace.actions.push(action);
        state = next;
        action = policy.sample(theta, &state, rng)?;
    }
    Ok(trace)
}

/// Runs the policy from a fresh start state for exactly `horizon` transitions
/// and returns the final state-action pair.
pub fn occupancy_sample_with_horizon<E, P, R>(
    env: &E,
    policy: &P,
    theta: &Theta,
    horizon: u64,
    rng: &mut R,
) -> Result<OccupancySample<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    R: Rng + ?Sized,
{
    let mut state = env.start_state(rng)?;
    let mut action = policy.sample(theta, &state, rng)?;
    for _ in 0..horizon {
        state = env.transition(&state, &action, rng)?;
        action = policy.sample(theta, &state, rng)?;
    }
    Ok(OccupancySample { state, action, horizon })
}

/// Draws `T ~ Geom(1 - gamma)` from `horizon_rng`, then `(s_T, a_T)` using
/// `trajectory_rng`. The pair is distributed as the normalised discounted
/// occupancy measure of the policy.
pub fn rollout_to_occupancy_sample<E, P, R1, R2>(
    env: &E,
    policy: &P,
    theta: &Theta,
    horizon_rng: &mut R1,
    trajectory_rng: &mut R2,
) -> Result<OccupancySample<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let horizon = sample_geometric(1.0 - env.gamma(), horizon_rng)?;
    occupancy_sample_with_horizon(env, policy, theta, horizon, trajectory_rng)
}
