//! Environments, geometric horizons and rollouts.

mod geometric;
mod pendulum;
mod rollout;
mod tabular;

pub use geometric::sample_geometric;
pub use pendulum::{wrap_angle, Observation, PendulumEnv, PendulumState};
pub use rollout::{occupancy_sample_with_horizon, rollout, rollout_to_occupancy_sample, OccupancySample, RolloutTrace};
pub use tabular::{TabularMdp, TabularSpec};

use crate::error::Result;
use rand::Rng;
use std::fmt::Debug;

/// Sign pattern of a reward function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RewardSign {
    /// Every reward is at least `L_R > 0`.
    StrictlyPositive,
    /// Every reward is at most `-L_R < 0`.
    StrictlyNegative,
    /// Rewards may vanish or change sign.
    Mixed,
}

/// Bounds on the reward function used by the almost-sure estimator bounds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardBounds {
    pub min: f64,
    pub max: f64,
}

impl RewardBounds {
    /// `U_R = sup |R|`.
    pub fn upper_abs(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }

    /// `L_R = inf |R|` when the rewards have one strict sign, otherwise 0.
    pub fn lower_abs(&self) -> f64 {
        match self.sign() {
            RewardSign::StrictlyPositive => self.min,
            RewardSign::StrictlyNegative => -self.max,
            RewardSign::Mixed => 0.0,
        }
    }

    pub fn sign(&self) -> RewardSign {
        if self.min > 0.0 {
            RewardSign::StrictlyPositive
        } else if self.max < 0.0 {
            RewardSign::StrictlyNegative
        } else {
            RewardSign::Mixed
        }
    }
}

/// A discounted, non-terminating MDP that can be simulated.
pub trait Environment: Sync {
    type State: Clone + Debug + Send + Sync;
    type Action: Clone + Debug + Send + Sync;

    fn gamma(&self) -> f64;

    /// Draws the start state `s_0`. Environments with a fixed start ignore `rng`.
    fn start_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::State>;

    fn reward(&self, state: &Self::State, action: &Self::Action) -> Result<f64>;

    /// Draws `s' ~ P(.|s, a)`.
    fn transition<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        action: &Self::Action,
        rng: &mut R,
    ) -> Result<Self::State>;

    /// One environment step: the next state and the reward collected at `(s, a)`.
    fn step<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        action: &Self::Action,
        rng: &mut R,
    ) -> Result<(Self::State, f64)> {
        let r = self.reward(state, action)?;
        let next = self.transition(state, action, rng)?;
        Ok((next, r))
    }

    fn reward_bounds(&self) -> RewardBounds;
}

/// Environments whose rewards can be shifted by a constant.
pub trait RewardShift: Sized {
    /// The same environment with `R'(s, a) = R(s, a) + offset`.
    fn shift_rewards(&self, offset: f64) -> Self;
}

impl RewardShift for TabularMdp {
    fn shift_rewards(&self, offset: f64) -> Self {
        self.reshaped(offset)
    }
}

impl RewardShift for PendulumEnv {
    fn shift_rewards(&self, offset: f64) -> Self {
        self.reshaped(offset)
    }
}

/// Adds `offset` to every reward, leaving dynamics, discount and start untouched.
pub fn reshape_reward<E: RewardShift>(env: &E, offset: f64) -> E {
    env.shift_rewards(offset)
}
