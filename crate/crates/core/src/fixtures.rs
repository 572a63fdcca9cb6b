//! Small tabular problems with known structure, shared by tests, benches and the CLI.

use crate::error::{Error, Result};
use crate::linalg::restricted_eigen;
use crate::mdp::{Environment, TabularMdp};
use crate::oracle;
use crate::policy::{LinearSoftmax, Policy, Theta};
use rand::Rng;

pub const CHAIN2_TOML: &str = include_str!("../../../fixtures/chain2.toml");
pub const RING3_TOML: &str = include_str!("../../../fixtures/ring3.toml");
pub const CHAIN2_SADDLE_TOML: &str = include_str!("../../../fixtures/chain2_saddle.toml");

/// Two states, two actions, rewards in `[0.05, 0.95]`.
pub fn chain2() -> TabularMdp {
    TabularMdp::from_toml_str(CHAIN2_TOML).expect("bundled chain2 fixture")
}

/// Three states on a ring, two actions, strictly positive rewards.
pub fn ring3() -> TabularMdp {
    TabularMdp::from_toml_str(RING3_TOML).expect("bundled ring3 fixture")
}

/// Two states, three actions; paired with [`saddle_policy`] it has a strict saddle.
pub fn chain2_saddle() -> TabularMdp {
    TabularMdp::from_toml_str(CHAIN2_SADDLE_TOML).expect("bundled chain2_saddle fixture")
}

/// One shared weight for the first action of each [`chain2`] state, scaled so
/// that `J` has an interior maximiser with moderate curvature.
pub fn chain2_aliased_policy() -> LinearSoftmax {
    LinearSoftmax::new(&[vec![vec![0.25], vec![0.0]], vec![vec![0.125], vec![0.0]]]).expect("valid aliased features")
}

/// Two-dimensional log-linear policy for [`chain2_saddle`].
pub fn saddle_policy() -> LinearSoftmax {
    LinearSoftmax::new(&[
        vec![vec![-1.0, 0.0], vec![-1.0, -1.0], vec![0.0, 0.0]],
        vec![vec![0.0, -1.0], vec![-1.0, -1.0], vec![0.0, 0.0]],
    ])
    .expect("valid saddle features")
}

/// Starting guess for the saddle of [`chain2_saddle`] under [`saddle_policy`].
pub const SADDLE_HINT: [f64; 2] = [-1.122, -0.433];

/// A stationary point with its Hessian spectrum.
#[derive(Debug, Clone)]
pub struct StationaryPoint {
    pub theta: Theta,
    pub j: f64,
    pub grad_norm: f64,
    /// Eigenvalues on the complement of the invariant directions, descending.
    pub eigenvalues: Vec<f64>,
}

impl StationaryPoint {
    /// Maximisation convention: strict saddle iff the top eigenvalue is positive
    /// and some other is negative.
    pub fn is_strict_saddle(&self) -> bool {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        let bottom = self.eigenvalues.last().copied().unwrap_or(0.0);
        top > 0.0 && bottom < 0.0
    }
}

/// Newton's method on `grad J = 0` from `start`, using the exact Hessian.
pub fn newton_stationary<P: Policy<usize, usize>>(
    mdp: &TabularMdp,
    policy: &P,
    start: &Theta,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryPoint> {
    let mut theta = start.clone();
    for _ in 0..max_iter {
        let g = oracle::exact_policy_gradient(mdp, policy, &theta)?;
        if g.norm() <= tol {
            let h = oracle::exact_hessian(mdp, policy, &theta)?;
            let (eigenvalues, _) = restricted_eigen(&h, &policy.invariant_directions())?;
            return Ok(StationaryPoint {
                j: oracle::j_theta(mdp, policy, &theta)?,
                grad_norm: g.norm(),
                theta,
                eigenvalues,
            });
        }
        let h = oracle::exact_hessian(mdp, policy, &theta)?;
        let step = h.lu().solve(&g).ok_or_else(|| Error::numeric("singular Hessian in Newton step"))?;
        theta -= step;
    }
    Err(Error::numeric(format!("Newton did not reach gradient norm {tol} in {max_iter} steps")))
}

/// The saddle of [`chain2_saddle`] under [`saddle_policy`].
pub fn saddle_point() -> Result<StationaryPoint> {
    newton_stationary(&chain2_saddle(), &saddle_policy(), &Theta::from_row_slice(&SADDLE_HINT), 1e-12, 50)
}

/// Reward offset that makes the value of the start state zero at `theta`,
/// so the shifted rewards straddle zero.
pub fn zero_value_offset(mdp: &TabularMdp, j_at_theta: f64) -> f64 {
    -(1.0 - mdp.gamma()) * j_at_theta
}

/// A random MDP with `2..=max_states` states, `2..=max_actions` actions,
/// Dirichlet-like transition rows and rewards uniform in `[-1, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    max_states: usize,
    max_actions: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    if max_states < 2 || max_actions < 2 {
        return Err(Error::param("random MDPs need at least two states and two actions"));
    }
    let ns = rng.random_range(2..=max_states);
    let na = rng.random_range(2..=max_actions);
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let w: Vec<f64> = (0..ns).map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
        let total: f64 = w.iter().sum();
        let mut row: Vec<f64> = w.iter().map(|x| x / total).collect();
        let head: f64 = row[..ns - 1].iter().sum();
        row[ns - 1] = (1.0 - head).max(0.0);
        transition.extend(row);
    }
    let reward = (0..ns * na).map(|_| rng.random_range(-1.0..=1.0)).collect();
    TabularMdp::new(ns, na, transition, reward, gamma, 0)
}
