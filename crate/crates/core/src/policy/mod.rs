//! Parameterised stochastic policies.

mod bounds;
mod linear_softmax;
mod mlp;
mod softmax;
mod trunc_gauss;
pub mod truncnorm;

pub use bounds::{estimate_score_bounds, ScoreBounds};
pub use linear_softmax::{LinearSoftmax, LinearSoftmaxSpec};
pub use mlp::TruncGaussMlp;
pub use softmax::TabularSoftmax;
pub use trunc_gauss::{ScoreMode, TruncGaussLinear};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Parameter vector of a policy.
pub type Theta = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    TabularSoftmax,
    LinearSoftmax,
    TruncGaussLinear,
    TruncGaussMlp,
}

/// A parameter vector checked against the policy it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub kind: PolicyKind,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new<S, A, P: Policy<S, A> + ?Sized>(policy: &P, theta: &Theta) -> Result<Self> {
        policy.check_theta(theta)?;
        Ok(PolicyParams { kind: policy.kind(), theta: theta.iter().copied().collect() })
    }

    pub fn to_theta(&self) -> Theta {
        Theta::from_column_slice(&self.theta)
    }
}

/// A differentiable stochastic policy `pi_theta(a | s)`.
pub trait Policy<S, A>: Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> PolicyKind;

    fn sample<R: Rng + ?Sized>(&self, theta: &Theta, state: &S, rng: &mut R) -> Result<A>
    where
        Self: Sized;

    fn log_prob(&self, theta: &Theta, state: &S, action: &A) -> Result<f64>;

    /// `grad_theta log pi_theta(a | s)`.
    fn score(&self, theta: &Theta, state: &S, action: &A) -> Result<DVector<f64>>;

    /// `hess_theta log pi_theta(a | s)`.
    fn score_hessian(&self, _theta: &Theta, _state: &S, _action: &A) -> Result<DMatrix<f64>> {
        Err(Error::Capability(format!("{:?} has no score Hessian", self.kind())))
    }

    /// Directions along which `pi_theta` does not change. The Fisher matrix and
    /// the Hessian of `J` vanish on their span, so spectral quantities are
    /// taken on its orthogonal complement.
    fn invariant_directions(&self) -> Vec<DVector<f64>> {
        Vec::new()
    }

    /// Closed-form bounds valid for every `theta`, when the parameterisation
    /// admits them.
    fn analytic_bounds(&self) -> Option<ScoreBounds> {
        None
    }

    /// Starting parameters.
    fn init_theta<R: Rng + ?Sized>(&self, _rng: &mut R) -> Theta
    where
        Self: Sized,
    {
        Theta::zeros(self.dim())
    }

    fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::param(format!("theta has dimension {}, policy expects {}", theta.len(), self.dim())));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("theta has a non-finite entry"));
        }
        Ok(())
    }
}
