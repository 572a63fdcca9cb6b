use super::{Environment, RewardBounds};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Angle (0 is upright) and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        PendulumState { theta, theta_dot }
    }
}

/// States that expose a real feature vector to parametric policies.
pub trait Observation {
    fn obs_dim() -> usize;
    fn observe(&self, out: &mut [f64]);
}

impl Observation for PendulumState {
    fn obs_dim() -> usize {
        3
    }

    fn observe(&self, out: &mut [f64]) {
        out[0] = self.theta.cos();
        out[1] = self.theta.sin();
        out[2] = self.theta_dot;
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Frictionless torque-controlled pendulum integrated with semi-implicit Euler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumEnv {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub torque_limit: f64,
    pub reward_offset: f64,
    pub gamma: f64,
    /// Half-width of the uniform start distribution of `theta_dot`.
    pub start_speed: f64,
}

impl Default for PendulumEnv {
    fn default() -> Self {
        PendulumEnv {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            torque_limit: 20.0,
            reward_offset: -0.5,
            gamma: 0.97,
            start_speed: 1.0,
        }
    }
}

impl PendulumEnv {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gravity", self.gravity),
            ("mass", self.mass),
            ("length", self.length),
            ("dt", self.dt),
            ("max_speed", self.max_speed),
            ("torque_limit", self.torque_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("pendulum {name} must be positive, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !self.reward_offset.is_finite() || !(self.start_speed >= 0.0) {
            return Err(Error::Config("pendulum reward_offset/start_speed invalid".into()));
        }
        Ok(())
    }

    /// Same environment with `R' = R + offset`.
    pub fn reshaped(&self, offset: f64) -> Self {
        PendulumEnv { reward_offset: self.reward_offset + offset, ..self.clone() }
    }

    fn clip_torque(&self, u: f64) -> f64 {
        u.clamp(-self.torque_limit, self.torque_limit)
    }

    fn check_state(s: &PendulumState) -> Result<()> {
        if s.theta.is_finite() && s.theta_dot.is_finite() {
            Ok(())
        } else {
            Err(Error::numeric(format!("non-finite pendulum state {s:?}")))
        }
    }
}

impl Environment for PendulumEnv {
    type State = PendulumState;
    type Action = f64;

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn start_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PendulumState> {
        let theta = rng.random_range(-PI..PI);
        let theta_dot =
            if self.start_speed > 0.0 { rng.random_range(-self.start_speed..self.start_speed) } else { 0.0 };
        Ok(PendulumState { theta, theta_dot })
    }

    fn reward(&self, s: &PendulumState, a: &f64) -> Result<f64> {
        Self::check_state(s)?;
        if !a.is_finite() {
            return Err(Error::numeric(format!("non-finite torque {a}")));
        }
        let th = wrap_angle(s.theta);
        let u = self.clip_torque(*a);
        Ok(-(th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * u * u) + self.reward_offset)
    }

    fn transition<R: Rng + ?Sized>(&self, s: &PendulumState, a: &f64, _rng: &mut R) -> Result<PendulumState> {
        Self::check_state(s)?;
        if !a.is_finite() {
            return Err(Error::numeric(format!("non-finite torque {a}")));
        }
        let u = self.clip_torque(*a);
        let (g, m, l, dt) = (self.gravity, self.mass, self.length, self.dt);
        let acc = 3.0 * g / (2.0 * l) * s.theta.sin() + 3.0 / (m * l * l) * u;
        let theta_dot = (s.theta_dot + acc * dt).clamp(-self.max_speed, self.max_speed);
        let theta = wrap_angle(s.theta + theta_dot * dt);
        let next = PendulumState { theta, theta_dot };
        Self::check_state(&next)?;
        Ok(next)
    }

    fn reward_bounds(&self) -> RewardBounds {
        let worst = PI * PI + 0.1 * self.max_speed * self.max_speed + 0.001 * self.torque_limit * self.torque_limit;
        RewardBounds { min: -worst + self.reward_offset, max: self.reward_offset }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RewardSign;
    use crate::rng::seeded;

    #[test]
    fn upright_at_rest_pays_offset() {
        let env = PendulumEnv::default();
        assert_eq!(env.reward(&PendulumState::new(0.0, 0.0), &0.0).unwrap(), -0.5);
    }

    #[test]
    fn reward_range_on_random_inputs() {
        let env = PendulumEnv::default();
        let mut rng = seeded(5);
        for _ in 0..100_000 {
            let s = PendulumState::new(rng.random_range(-10.0..10.0), rng.random_range(-8.0..=8.0));
            let a = rng.random_range(-20.0..=20.0);
            let r = env.reward(&s, &a).unwrap();
            assert!((-17.1736044..=-0.5).contains(&r), "r = {r}");
        }
        let b = env.reward_bounds();
        assert!(b.min >= -17.1736044 && b.max == -0.5);
        assert_eq!(b.sign(), RewardSign::StrictlyNegative);
    }

    #[test]
    fn offset_ten_is_mixed_sign() {
        let env = PendulumEnv::default().reshaped(10.0);
        let b = env.reward_bounds();
        assert_eq!(b.max, 9.5);
        assert!((b.min - (-7.1696044)).abs() < 1e-6);
        assert_eq!(b.sign(), RewardSign::Mixed);
    }

    #[test]
    fn speed_is_clipped_and_angle_wrapped() {
        let env = PendulumEnv::default();
        let mut rng = seeded(0);
        let mut s = PendulumState::new(3.0, 7.9);
        for _ in 0..200 {
            s = env.transition(&s, &20.0, &mut rng).unwrap();
            assert!(s.theta_dot.abs() <= 8.0);
            assert!((-PI..PI).contains(&s.theta));
        }
    }

    #[test]
    fn non_finite_state_is_numeric_error() {
        let env = PendulumEnv::default();
        let mut rng = seeded(0);
        let bad = PendulumState::new(f64::NAN, 0.0);
        assert!(matches!(env.step(&bad, &0.0, &mut rng), Err(Error::Numeric(_))));
        assert!(matches!(env.step(&PendulumState::new(0.0, 0.0), &f64::INFINITY, &mut rng), Err(Error::Numeric(_))));
    }

    #[test]
    fn start_distribution_in_range() {
        let env = PendulumEnv::default();
        let mut rng = seeded(9);
        for _ in 0..1000 {
            let s = env.start_state(&mut rng).unwrap();
            assert!(s.theta.abs() <= PI && s.theta_dot.abs() <= 1.0);
        }
    }

    #[test]
    fn wrap_is_periodic() {
        for x in [-7.0, -PI, 0.0, 1.0, PI, 9.5] {
            let w = wrap_angle(x);
            assert!((-PI..PI).contains(&w));
            assert!(((x - w) / (2.0 * PI)).fract().abs() < 1e-12 || ((x - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-12);
        }
    }
}
