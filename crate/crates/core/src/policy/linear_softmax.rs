use super::{Policy, PolicyKind, ScoreBounds, Theta};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Softmax over linear logits `phi(s, a)^T theta` on a finite MDP. With
/// one-hot features this is the tabular softmax; with fewer features than
/// state-action pairs, states share parameters and `J` can have interior
/// maxima and saddles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearSoftmaxSpec", into = "LinearSoftmaxSpec")]
pub struct LinearSoftmax {
    n_states: usize,
    n_actions: usize,
    /// Row `s * n_actions + a` is `phi(s, a)`.
    features: DMatrix<f64>,
}

/// Serialised form: `features[s][a]` is the feature vector of `(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxSpec {
    pub features: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<LinearSoftmaxSpec> for LinearSoftmax {
    type Error = Error;

    fn try_from(spec: LinearSoftmaxSpec) -> Result<Self> {
        LinearSoftmax::new(&spec.features)
    }
}

impl From<LinearSoftmax> for LinearSoftmaxSpec {
    fn from(p: LinearSoftmax) -> Self {
        let features = (0..p.n_states)
            .map(|s| (0..p.n_actions).map(|a| p.phi(s, a).iter().copied().collect()).collect())
            .collect();
        LinearSoftmaxSpec { features }
    }
}

impl LinearSoftmax {
    /// `features[s][a]` is `phi(s, a)`; every vector must have the same length.
    pub fn new(features: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_states = features.len();
        let n_actions = features.first().map_or(0, Vec::len);
        let d = features.first().and_then(|f| f.first()).map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 || d == 0 {
            return Err(Error::param("linear softmax needs states, actions and features"));
        }
        let mut m = DMatrix::zeros(n_states * n_actions, d);
        for (s, row) in features.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::param(format!("state {s} has {} actions, expected {n_actions}", row.len())));
            }
            for (a, phi) in row.iter().enumerate() {
                if phi.len() != d || phi.iter().any(|x| !x.is_finite()) {
                    return Err(Error::param(format!("feature ({s}, {a}) must be {d} finite numbers")));
                }
                m.row_mut(s * n_actions + a).copy_from_slice(phi);
            }
        }
        Ok(LinearSoftmax { n_states, n_actions, features: m })
    }

    /// One-hot features: the tabular softmax.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Result<Self> {
        let d = n_states * n_actions;
        let features: Vec<Vec<Vec<f64>>> = (0..n_states)
            .map(|s| {
                (0..n_actions)
                    .map(|a| (0..d).map(|i| if i == s * n_actions + a { 1.0 } else { 0.0 }).collect())
                    .collect()
            })
            .collect();
        Self::new(&features)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn phi(&self, s: usize, a: usize) -> DVector<f64> {
        self.features.row(s * self.n_actions + a).transpose()
    }

    fn check(&self, s: usize, a: Option<usize>) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::param(format!("state {s} out of range")));
        }
        if let Some(a) = a.filter(|&a| a >= self.n_actions) {
            return Err(Error::param(format!("action {a} out of range")));
        }
        Ok(())
    }

    fn logits(&self, theta: &Theta, s: usize) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.features.row(s * self.n_actions + a).dot(&theta.transpose())).collect()
    }

    /// `pi_theta(. | s)`.
    pub fn probs(&self, theta: &Theta, s: usize) -> Vec<f64> {
        let z = self.logits(theta, s);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    /// `E_{b ~ pi(.|s)} phi(s, b)`.
    fn mean_feature(&self, p: &[f64], s: usize) -> DVector<f64> {
        let mut m = DVector::zeros(self.features.ncols());
        for (b, pb) in p.iter().enumerate() {
            m.axpy(*pb, &self.phi(s, b), 1.0);
        }
        m
    }

    /// Largest distance between two feature vectors of one state.
    pub fn feature_diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for b in 0..a {
                    d = d.max((self.phi(s, a) - self.phi(s, b)).norm());
                }
            }
        }
        d
    }
}

impl Policy<usize, usize> for LinearSoftmax {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::LinearSoftmax
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &Theta, s: &usize, rng: &mut R) -> Result<usize> {
        self.check(*s, None)?;
        let p = self.probs(theta, *s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (a, pa) in p.iter().enumerate() {
            if *pa > 0.0 {
                last = a;
                acc += pa;
                if u < acc {
                    return Ok(a);
                }
            }
        }
        Ok(last)
    }

    fn log_prob(&self, theta: &Theta, s: &usize, a: &usize) -> Result<f64> {
        self.check(*s, Some(*a))?;
        let z = self.logits(theta, *s);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(z[*a] - lse)
    }

    /// `phi(s, a) - E_pi phi(s, .)`.
    fn score(&self, theta: &Theta, s: &usize, a: &usize) -> Result<DVector<f64>> {
        self.check(*s, Some(*a))?;
        let p = self.probs(theta, *s);
        if p[*a] == 0.0 {
            return Err(Error::Domain(format!("action {a} has zero probability in state {s}")));
        }
        Ok(self.phi(*s, *a) - self.mean_feature(&p, *s))
    }

    /// Minus the covariance of `phi(s, .)` under `pi(.|s)`; independent of `a`.
    fn score_hessian(&self, theta: &Theta, s: &usize, a: &usize) -> Result<DMatrix<f64>> {
        self.check(*s, Some(*a))?;
        let p = self.probs(theta, *s);
        let mean = self.mean_feature(&p, *s);
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for (b, pb) in p.iter().enumerate() {
            let c = self.phi(*s, b) - &mean;
            h.ger(-pb, &c, &c, 1.0);
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Orthonormal basis of the directions that shift every logit of a state
    /// by the same amount.
    fn invariant_directions(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        let mut gram = DMatrix::zeros(d, d);
        for s in 0..self.n_states {
            let base = self.phi(s, 0);
            for a in 1..self.n_actions {
                let diff = self.phi(s, a) - &base;
                gram.ger(1.0, &diff, &diff, 1.0);
            }
        }
        let eig = gram.symmetric_eigen();
        let scale = eig.eigenvalues.iter().copied().fold(0.0, f64::max).max(1.0);
        (0..d)
            .filter(|&i| eig.eigenvalues[i] <= 1e-12 * scale)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect()
    }

    /// With `D` the feature diameter: `||score|| <= D`; the score Jacobian is a
    /// covariance of a vector of diameter `D`, so at most `D^2/4`; its
    /// derivative is a third cumulant, at most `D^3/(6 sqrt 3)` along any unit
    /// direction.
    fn analytic_bounds(&self) -> Option<ScoreBounds> {
        let d = self.feature_diameter();
        Some(ScoreBounds {
            b_theta: d,
            l_theta: d * d / 4.0,
            rho_theta: d.powi(3) / (6.0 * 3f64.sqrt()),
            l_i: None,
            empirical: false,
        })
    }
}
