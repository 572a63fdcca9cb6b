use super::{Policy, PolicyKind, ScoreBounds, Theta};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Tabular softmax with one logit per `(s, a)`, laid out as `theta[s * n_actions + a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TabularSoftmax {
    n_states: usize,
    n_actions: usize,
}

impl TabularSoftmax {
    pub fn new(n_states: usize, n_actions: usize) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::param("softmax policy needs at least one state and action"));
        }
        Ok(TabularSoftmax { n_states, n_actions })
    }

    pub fn for_mdp(mdp: &crate::mdp::TabularMdp) -> Self {
        TabularSoftmax { n_states: mdp.n_states(), n_actions: mdp.n_actions() }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::param(format!("state {s} out of range")));
        }
        Ok(())
    }

    /// `pi_theta(. | s)`.
    pub fn probs(&self, theta: &Theta, s: usize) -> Vec<f64> {
        let block = &theta.as_slice()[s * self.n_actions..(s + 1) * self.n_actions];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = block.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    /// The full `n_states x n_actions` table of action probabilities.
    pub fn prob_table(&self, theta: &Theta) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for (a, p) in self.probs(theta, s).into_iter().enumerate() {
                out[(s, a)] = p;
            }
        }
        out
    }
}

impl Policy<usize, usize> for TabularSoftmax {
    fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::TabularSoftmax
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &Theta, s: &usize, rng: &mut R) -> Result<usize> {
        self.check_state(*s)?;
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
        self.check_state(*s)?;
        if *a >= self.n_actions {
            return Err(Error::param(format!("action {a} out of range")));
        }
        let block = &theta.as_slice()[s * self.n_actions..(s + 1) * self.n_actions];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + block.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(block[*a] - lse)
    }

    fn score(&self, theta: &Theta, s: &usize, a: &usize) -> Result<DVector<f64>> {
        self.check_state(*s)?;
        if *a >= self.n_actions {
            return Err(Error::param(format!("action {a} out of range")));
        }
        let p = self.probs(theta, *s);
        if p[*a] == 0.0 {
            return Err(Error::Domain(format!("action {a} has zero probability in state {s}")));
        }
        let mut g = DVector::zeros(self.dim());
        let base = s * self.n_actions;
        for (b, pb) in p.iter().enumerate() {
            g[base + b] = -pb;
        }
        g[base + a] += 1.0;
        Ok(g)
    }

    fn score_hessian(&self, theta: &Theta, s: &usize, a: &usize) -> Result<DMatrix<f64>> {
        self.check_state(*s)?;
        if *a >= self.n_actions {
            return Err(Error::param(format!("action {a} out of range")));
        }
        let p = self.probs(theta, *s);
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        let base = s * self.n_actions;
        for i in 0..self.n_actions {
            for j in 0..self.n_actions {
                let d = if i == j { p[i] } else { 0.0 };
                h[(base + i, base + j)] = p[i] * p[j] - d;
            }
        }
        Ok(h)
    }

    fn invariant_directions(&self) -> Vec<DVector<f64>> {
        (0..self.n_states)
            .map(|s| {
                let mut v = DVector::zeros(self.dim());
                let w = 1.0 / (self.n_actions as f64).sqrt();
                for a in 0..self.n_actions {
                    v[self.index(s, a)] = w;
                }
                v
            })
            .collect()
    }

    /// `||e_a - pi|| < sqrt(2)`; the log-softmax Hessian is minus a covariance
    /// of one-hot vectors (norm at most 1/2); its derivative is a third
    /// cumulant of such vectors (norm at most `sqrt(6)/9`).
    fn analytic_bounds(&self) -> Option<ScoreBounds> {
        Some(ScoreBounds {
            b_theta: std::f64::consts::SQRT_2,
            l_theta: 0.5,
            rho_theta: 6f64.sqrt() / 9.0,
            l_i: None,
            empirical: false,
        })
    }
}
