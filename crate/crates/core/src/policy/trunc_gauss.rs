use super::truncnorm::{ln_std_pdf, TruncStdNormal};
use super::{Policy, PolicyKind, Theta};
use crate::error::{Error, Result};
use crate::mdp::Observation;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::marker::PhantomData;

/// Which score a truncated-Gaussian policy reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Includes the derivative of the truncation normaliser.
    #[default]
    Exact,
    /// `(a - mu) / sigma^2 * grad mu`, as if the Gaussian were not truncated.
    /// Biased; for comparison only.
    Untruncated,
}

/// Gaussian with fixed `sigma` truncated to `[-bound, bound]`, as a function of its mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncGaussHead {
    pub sigma: f64,
    pub bound: f64,
    pub mode: ScoreMode,
}

impl TruncGaussHead {
    pub fn new(sigma: f64, bound: f64, mode: ScoreMode) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param(format!("sigma must be positive, got {sigma}")));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::param(format!("action bound must be positive, got {bound}")));
        }
        Ok(TruncGaussHead { sigma, bound, mode })
    }

    fn standardised(&self, mu: f64) -> Result<TruncStdNormal> {
        if !mu.is_finite() {
            return Err(Error::numeric(format!("non-finite policy mean {mu}")));
        }
        Ok(TruncStdNormal::new((-self.bound - mu) / self.sigma, (self.bound - mu) / self.sigma))
    }

    fn check_action(&self, a: f64) -> Result<()> {
        if !(a.abs() <= self.bound) {
            return Err(Error::Domain(format!("action {a} outside [-{0}, {0}]", self.bound)));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> Result<f64> {
        let t = self.standardised(mu)?;
        Ok((mu + self.sigma * t.sample(rng)).clamp(-self.bound, self.bound))
    }

    pub fn log_prob(&self, mu: f64, a: f64) -> Result<f64> {
        let t = self.standardised(mu)?;
        if a.abs() > self.bound {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(ln_std_pdf((a - mu) / self.sigma) - self.sigma.ln() - t.ln_z)
    }

    /// `d log p(a) / d mu`.
    pub fn dmu(&self, mu: f64, a: f64) -> Result<f64> {
        self.check_action(a)?;
        let t = self.standardised(mu)?;
        let s2 = self.sigma * self.sigma;
        Ok(match self.mode {
            ScoreMode::Exact => (a - mu) / s2 - t.dlnz() / self.sigma,
            ScoreMode::Untruncated => (a - mu) / s2,
        })
    }

    /// `d^2 log p(a) / d mu^2`; independent of `a`.
    pub fn d2mu(&self, mu: f64, a: f64) -> Result<f64> {
        self.check_action(a)?;
        let t = self.standardised(mu)?;
        let s2 = self.sigma * self.sigma;
        Ok(match self.mode {
            ScoreMode::Exact => -(1.0 + t.d2lnz()) / s2,
            ScoreMode::Untruncated => -1.0 / s2,
        })
    }
}

/// Truncated Gaussian whose mean is linear in the observation plus a bias:
/// `mu = theta[..k] . obs(s) + theta[k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncGaussLinear<S> {
    head: TruncGaussHead,
    _state: PhantomData<fn(&S)>,
}

impl<S: Observation> TruncGaussLinear<S> {
    pub fn new(sigma: f64, bound: f64, mode: ScoreMode) -> Result<Self> {
        Ok(TruncGaussLinear { head: TruncGaussHead::new(sigma, bound, mode)?, _state: PhantomData })
    }

    pub fn head(&self) -> &TruncGaussHead {
        &self.head
    }

    fn features(&self, s: &S) -> DVector<f64> {
        let k = S::obs_dim();
        let mut phi = DVector::zeros(k + 1);
        S::observe(s, &mut phi.as_mut_slice()[..k]);
        phi[k] = 1.0;
        phi
    }

    pub fn mean(&self, theta: &Theta, s: &S) -> f64 {
        theta.dot(&self.features(s))
    }
}

impl<S: Observation> Policy<S, f64> for TruncGaussLinear<S> {
    fn dim(&self) -> usize {
        S::obs_dim() + 1
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::TruncGaussLinear
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &Theta, s: &S, rng: &mut R) -> Result<f64> {
        self.head.sample(self.mean(theta, s), rng)
    }

    fn log_prob(&self, theta: &Theta, s: &S, a: &f64) -> Result<f64> {
        self.head.log_prob(self.mean(theta, s), *a)
    }

    fn score(&self, theta: &Theta, s: &S, a: &f64) -> Result<DVector<f64>> {
        let phi = self.features(s);
        let mu = theta.dot(&phi);
        Ok(phi * self.head.dmu(mu, *a)?)
    }

    fn score_hessian(&self, theta: &Theta, s: &S, a: &f64) -> Result<DMatrix<f64>> {
        let phi = self.features(s);
        let mu = theta.dot(&phi);
        Ok(&phi * phi.transpose() * self.head.d2mu(mu, *a)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::PendulumState;
    use crate::rng::seeded;

    type Lin = TruncGaussLinear<PendulumState>;

    fn random_point(rng: &mut crate::rng::StreamRng) -> (Theta, PendulumState) {
        let theta = Theta::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
        let s = PendulumState::new(rng.random_range(-3.0..3.0), rng.random_range(-8.0..8.0));
        (theta, s)
    }

    #[test]
    fn density_integrates_to_one() {
        let head = TruncGaussHead::new(1.0, 20.0, ScoreMode::Exact).unwrap();
        for mu in [-35.0, -19.0, 0.0, 4.5, 22.0] {
            // Composite Simpson on [-20, 20].
            let n = 40_000;
            let h = 40.0 / n as f64;
            let f = |a: f64| head.log_prob(mu, a).unwrap().exp();
            let mut acc = f(-20.0) + f(20.0);
            for i in 1..n {
                let a = -20.0 + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a);
            }
            let integral = acc * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "mu={mu}: {integral}");
        }
    }

    #[test]
    fn samples_respect_bounds_and_truncation_shifts_mean() {
        let pi = Lin::new(1.0, 20.0, ScoreMode::Exact).unwrap();
        // mu = -30: far below the lower bound.
        let theta = Theta::from_column_slice(&[0.0, 0.0, 0.0, -30.0]);
        let s = PendulumState::new(0.0, 0.0);
        let mut rng = seeded(2);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let a = pi.sample(&theta, &s, &mut rng).unwrap();
            assert!((-20.0..=20.0).contains(&a));
            sum += a;
        }
        assert!(sum / n as f64 > -30.0);
    }

    #[test]
    fn exact_score_matches_finite_differences() {
        let pi = Lin::new(0.8, 2.0, ScoreMode::Exact).unwrap();
        let mut rng = seeded(6);
        for _ in 0..100 {
            let (theta, s) = random_point(&mut rng);
            let a = pi.sample(&theta, &s, &mut rng).unwrap();
            let g = pi.score(&theta, &s, &a).unwrap();
            let h = 1e-5;
            let fd = DVector::from_fn(4, |i, _| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += h;
                tm[i] -= h;
                (pi.log_prob(&tp, &s, &a).unwrap() - pi.log_prob(&tm, &s, &a).unwrap()) / (2.0 * h)
            });
            assert!((&g - &fd).norm() <= 1e-5 * (1.0 + g.norm()), "{g} vs {fd}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_score() {
        let pi = Lin::new(0.8, 2.0, ScoreMode::Exact).unwrap();
        let mut rng = seeded(7);
        for _ in 0..50 {
            let (theta, s) = random_point(&mut rng);
            let a = pi.sample(&theta, &s, &mut rng).unwrap();
            let hess = pi.score_hessian(&theta, &s, &a).unwrap();
            assert_eq!(hess, hess.transpose());
            let h = 1e-5;
            let fd = DMatrix::from_fn(4, 4, |i, j| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                (pi.score(&tp, &s, &a).unwrap()[i] - pi.score(&tm, &s, &a).unwrap()[i]) / (2.0 * h)
            });
            assert!((&hess - &fd).norm() <= 1e-4 * (1.0 + hess.norm()));
        }
    }

    #[test]
    fn exact_score_has_zero_mean_but_untruncated_does_not() {
        let exact = TruncGaussHead::new(1.0, 2.0, ScoreMode::Exact).unwrap();
        let approx = TruncGaussHead { mode: ScoreMode::Untruncated, ..exact };
        let mu = 1.7;
        let n = 200_000;
        let mut rng = seeded(10);
        let (mut se, mut sa) = (0.0, 0.0);
        for _ in 0..n {
            let a = exact.sample(mu, &mut rng).unwrap();
            se += exact.dmu(mu, a).unwrap();
            sa += approx.dmu(mu, a).unwrap();
        }
        assert!((se / n as f64).abs() < 0.01);
        assert!((sa / n as f64).abs() > 0.1);
    }

    #[test]
    fn out_of_range_action_is_domain_error() {
        let head = TruncGaussHead::new(1.0, 2.0, ScoreMode::Exact).unwrap();
        assert!(matches!(head.dmu(0.0, 2.5), Err(Error::Domain(_))));
        assert_eq!(head.log_prob(0.0, 2.5).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(head.sample(f64::NAN, &mut seeded(0)), Err(Error::Numeric(_))));
    }
}
