use super::trunc_gauss::{ScoreMode, TruncGaussHead};
use super::{Policy, PolicyKind, Theta};
use crate::error::{Error, Result};
use crate::mdp::Observation;
use nalgebra::DVector;
use rand::Rng;
use std::marker::PhantomData;

/// Truncated Gaussian whose mean is an MLP of the observation: two hidden
/// layers, each followed by a softmax across its units, and a scaled `tanh`
/// output so that the mean lies inside the action interval.
///
/// Parameters are laid out as `W1 (row-major), b1, W2, b2, w3, b3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncGaussMlp<S> {
    head: TruncGaussHead,
    hidden: [usize; 2],
    _state: PhantomData<fn(&S)>,
}

struct Forward {
    x: DVector<f64>,
    h1: DVector<f64>,
    h2: DVector<f64>,
    tanh_out: f64,
    mu: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Widest layer served by the allocation-free mean.
const STACK: usize = 32;

fn softmax_slice(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

fn softmax_in_place(z: &mut DVector<f64>) {
    softmax_slice(z.as_mut_slice());
}

/// Pulls an upstream gradient back through `h = softmax(z)`.
fn softmax_backward(h: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
    let dot = h.dot(upstream);
    h.component_mul(&upstream.add_scalar(-dot))
}

impl<S: Observation> TruncGaussMlp<S> {
    pub fn new(hidden: [usize; 2], sigma: f64, bound: f64, mode: ScoreMode) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::param("hidden layers must be non-empty"));
        }
        Ok(TruncGaussMlp { head: TruncGaussHead::new(sigma, bound, mode)?, hidden, _state: PhantomData })
    }

    /// The 2 x 10 architecture with `sigma = 1`.
    pub fn standard(bound: f64) -> Result<Self> {
        Self::new([10, 10], 1.0, bound, ScoreMode::Exact)
    }

    pub fn head(&self) -> &TruncGaussHead {
        &self.head
    }

    fn offsets(&self) -> [usize; 6] {
        let k = S::obs_dim();
        let [n1, n2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + n1 * k;
        let w2 = b1 + n1;
        let b2 = w2 + n2 * n1;
        let w3 = b2 + n2;
        let b3 = w3 + n2;
        [w1, b1, w2, b2, w3, b3]
    }

    fn forward(&self, theta: &Theta, s: &S) -> Forward {
        let k = S::obs_dim();
        let [n1, n2] = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let t = theta.as_slice();
        let mut x = DVector::zeros(k);
        S::observe(s, x.as_mut_slice());
        let mut h1 = DVector::from_fn(n1, |i, _| t[b1 + i] + dot(&t[w1 + i * k..w1 + (i + 1) * k], x.as_slice()));
        softmax_in_place(&mut h1);
        let mut h2 = DVector::from_fn(n2, |i, _| t[b2 + i] + dot(&t[w2 + i * n1..w2 + (i + 1) * n1], h1.as_slice()));
        softmax_in_place(&mut h2);
        let z3 = dot(&t[w3..b3], h2.as_slice()) + t[b3];
        let tanh_out = z3.tanh();
        Forward { x, h1, h2, tanh_out, mu: self.head.bound * tanh_out }
    }

    pub fn mean(&self, theta: &Theta, s: &S) -> f64 {
        let [n1, n2] = self.hidden;
        if S::obs_dim() > STACK || n1 > STACK || n2 > STACK {
            return self.forward(theta, s).mu;
        }
        // Allocation-free path for the sampling hot loop.
        let k = S::obs_dim();
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let t = theta.as_slice();
        let mut x = [0.0; STACK];
        S::observe(s, &mut x[..k]);
        let mut h1 = [0.0; STACK];
        for (i, h) in h1[..n1].iter_mut().enumerate() {
            *h = t[b1 + i] + dot(&t[w1 + i * k..w1 + (i + 1) * k], &x[..k]);
        }
        softmax_slice(&mut h1[..n1]);
        let mut h2 = [0.0; STACK];
        for (i, h) in h2[..n2].iter_mut().enumerate() {
            *h = t[b2 + i] + dot(&t[w2 + i * n1..w2 + (i + 1) * n1], &h1[..n1]);
        }
        softmax_slice(&mut h2[..n2]);
        self.head.bound * (dot(&t[w3..b3], &h2[..n2]) + t[b3]).tanh()
    }

    /// `grad_theta mu(s)` by reverse-mode differentiation.
    fn mean_gradient(&self, theta: &Theta, f: &Forward) -> DVector<f64> {
        let k = S::obs_dim();
        let [n1, n2] = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let t = theta.as_slice();
        let mut grad = DVector::zeros(self.dim());
        let dz3 = self.head.bound * (1.0 - f.tanh_out * f.tanh_out);
        grad[b3] = dz3;
        for j in 0..n2 {
            grad[w3 + j] = dz3 * f.h2[j];
        }
        let up2 = DVector::from_fn(n2, |j, _| t[w3 + j] * dz3);
        let g2 = softmax_backward(&f.h2, &up2);
        for i in 0..n2 {
            grad[b2 + i] = g2[i];
            for j in 0..n1 {
                grad[w2 + i * n1 + j] = g2[i] * f.h1[j];
            }
        }
        let up1 = DVector::from_fn(n1, |j, _| (0..n2).map(|i| t[w2 + i * n1 + j] * g2[i]).sum());
        let g1 = softmax_backward(&f.h1, &up1);
        for i in 0..n1 {
            grad[b1 + i] = g1[i];
            for j in 0..k {
                grad[w1 + i * k + j] = g1[i] * f.x[j];
            }
        }
        grad
    }
}

impl<S: Observation> Policy<S, f64> for TruncGaussMlp<S> {
    fn dim(&self) -> usize {
        self.offsets()[5] + 1
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::TruncGaussMlp
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &Theta, s: &S, rng: &mut R) -> Result<f64> {
        self.head.sample(self.mean(theta, s), rng)
    }

    fn log_prob(&self, theta: &Theta, s: &S, a: &f64) -> Result<f64> {
        self.head.log_prob(self.mean(theta, s), *a)
    }

    fn score(&self, theta: &Theta, s: &S, a: &f64) -> Result<DVector<f64>> {
        let f = self.forward(theta, s);
        let d = self.head.dmu(f.mu, *a)?;
        Ok(self.mean_gradient(theta, &f) * d)
    }

    /// Uniform on `[-0.5, 0.5] / sqrt(fan_in)` per layer.
    fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        let k = S::obs_dim();
        let [n1, n2] = self.hidden;
        let [_, _, w2, _, w3, _] = self.offsets();
        Theta::from_fn(self.dim(), |i, _| {
            let fan_in = if i < w2 {
                k
            } else if i < w3 {
                n1
            } else {
                n2
            };
            rng.random_range(-0.5..=0.5) / (fan_in as f64).sqrt()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::PendulumState;
    use crate::rng::seeded;

    type Mlp = TruncGaussMlp<PendulumState>;

    #[test]
    fn standard_architecture_has_161_parameters() {
        assert_eq!(Mlp::standard(20.0).unwrap().dim(), 161);
    }

    #[test]
    fn score_matches_finite_differences() {
        let pi = Mlp::standard(20.0).unwrap();
        let mut rng = seeded(21);
        for _ in 0..100 {
            let theta = pi.init_theta(&mut rng) * 6.0;
            let s = PendulumState::new(rng.random_range(-3.0..3.0), rng.random_range(-8.0..8.0));
            let a = pi.sample(&theta, &s, &mut rng).unwrap();
            let g = pi.score(&theta, &s, &a).unwrap();
            let h = 1e-5;
            let fd = DVector::from_fn(pi.dim(), |i, _| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += h;
                tm[i] -= h;
                (pi.log_prob(&tp, &s, &a).unwrap() - pi.log_prob(&tm, &s, &a).unwrap()) / (2.0 * h)
            });
            assert!((&g - &fd).norm() <= 1e-5 * (1.0 + g.norm()), "{}", (&g - &fd).norm());
        }
    }

    #[test]
    fn fast_mean_matches_forward_pass() {
        let pi = Mlp::standard(20.0).unwrap();
        let mut rng = seeded(23);
        for _ in 0..50 {
            let theta = pi.init_theta(&mut rng) * 4.0;
            let s = PendulumState::new(rng.random_range(-3.0..3.0), rng.random_range(-8.0..8.0));
            assert!((pi.mean(&theta, &s) - pi.forward(&theta, &s).mu).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_in_torque_range() {
        let pi = Mlp::standard(20.0).unwrap();
        let mut rng = seeded(22);
        let theta = pi.init_theta(&mut rng) * 50.0;
        for _ in 0..100_000 {
            let s = PendulumState::new(rng.random_range(-3.2..3.2), rng.random_range(-8.0..8.0));
            let a = pi.sample(&theta, &s, &mut rng).unwrap();
            assert!((-20.0..=20.0).contains(&a));
        }
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let pi = Mlp::standard(20.0).unwrap();
        let a = pi.init_theta(&mut seeded(1));
        let b = pi.init_theta(&mut seeded(1));
        assert_eq!(a, b);
        assert!(a.rows(0, 40).iter().all(|x| x.abs() <= 0.5 / 3f64.sqrt()));
        assert!(a.rows(40, 121).iter().all(|x| x.abs() <= 0.5 / 10f64.sqrt()));
    }

    #[test]
    fn no_score_hessian() {
        let pi = Mlp::standard(20.0).unwrap();
        let theta = Theta::zeros(161);
        let s = PendulumState::new(0.0, 0.0);
        assert!(matches!(pi.score_hessian(&theta, &s, &0.0), Err(Error::Capability(_))));
    }
}
