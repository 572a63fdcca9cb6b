use super::{Policy, Theta};
use crate::error::{Error, Result};
use crate::linalg::{restricted_eigen, spectral_norm};
use crate::mdp::{rollout_to_occupancy_sample, Environment};
use crate::par::{try_map_indexed, Execution};
use crate::rng::{Purpose, StreamKey};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Constants of the score function: `||score|| <= b_theta`, the score is
/// `l_theta`-Lipschitz, its Jacobian is `rho_theta`-Lipschitz, and the Fisher
/// matrix is bounded below by `l_i` on the identifiable subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBounds {
    pub b_theta: f64,
    pub l_theta: f64,
    pub rho_theta: f64,
    pub l_i: Option<f64>,
    /// True when the values are probed maxima/minima rather than proven bounds.
    pub empirical: bool,
}

struct Probe {
    score_norm: f64,
    hess_norm: f64,
    third: f64,
    score: DVector<f64>,
}

const FD_STEP: f64 = 1e-3;

/// Probes `n_probe` pairs `(s, a) ~ rho_theta` and reports the largest score
/// norm, the largest score-Jacobian norm (exact when the policy has a score
/// Hessian, otherwise a directional difference), a directional second
/// difference of the score as a surrogate for `rho_theta`, and the smallest
/// restricted eigenvalue of the empirical Fisher matrix.
pub fn estimate_score_bounds<E, P>(
    env: &E,
    policy: &P,
    theta: &Theta,
    n_probe: usize,
    key: StreamKey,
    exec: Execution,
) -> Result<ScoreBounds>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    if n_probe == 0 {
        return Err(Error::param("n_probe must be at least 1"));
    }
    policy.check_theta(theta)?;
    let d = policy.dim();
    let probes = try_map_indexed(n_probe, exec, |i| -> Result<Probe> {
        let k = key.with_index(i as u64);
        let smp = rollout_to_occupancy_sample(
            env,
            policy,
            theta,
            &mut k.rng(Purpose::OccupancyHorizon),
            &mut k.rng(Purpose::OuterTrajectory),
        )?;
        let (s, a) = (&smp.state, &smp.action);
        let score = policy.score(theta, s, a)?;
        let mut dir_rng = k.rng(Purpose::Auxiliary(1));
        let v = DVector::from_fn(d, |_, _| dir_rng.random::<f64>() - 0.5);
        let v = v.normalize();
        let plus = policy.score(&(theta + &v * FD_STEP), s, a)?;
        let minus = policy.score(&(theta - &v * FD_STEP), s, a)?;
        let hess_norm = match policy.score_hessian(theta, s, a) {
            Ok(h) => spectral_norm(&h),
            Err(Error::Capability(_)) => (&plus - &minus).norm() / (2.0 * FD_STEP),
            Err(e) => return Err(e),
        };
        let third = (&plus - &score * 2.0 + &minus).norm() / (FD_STEP * FD_STEP);
        Ok(Probe { score_norm: score.norm(), hess_norm, third, score })
    })?;
    let mut fisher = DMatrix::zeros(d, d);
    for p in &probes {
        fisher += &p.score * p.score.transpose();
    }
    fisher /= n_probe as f64;
    let (eigs, _) = restricted_eigen(&fisher, &policy.invariant_directions())?;
    Ok(ScoreBounds {
        b_theta: probes.iter().map(|p| p.score_norm).fold(0.0, f64::max),
        l_theta: probes.iter().map(|p| p.hess_norm).fold(0.0, f64::max),
        rho_theta: probes.iter().map(|p| p.third).fold(0.0, f64::max),
        l_i: eigs.last().copied().map(|x| x.max(0.0)),
        empirical: true,
    })
}
