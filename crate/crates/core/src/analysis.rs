//! Statistical checks: z-tests for unbiasedness, bias-corrected gradient-norm
//! estimates, curvature-correlation estimates, Fisher estimates and rate fits.

use crate::error::{Error, Result};
use crate::estimators::{eval_pg_batch, GradientKind};
use crate::mdp::{rollout_to_occupancy_sample, Environment};
use crate::par::{try_map_indexed, Execution};
use crate::policy::{Policy, Theta};
use crate::rng::{Purpose, StreamKey};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Outcome of one statistical check. `pass` holds exactly when
/// `statistic <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub n: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub detail: String,
}

impl TestReport {
    pub fn new(name: impl Into<String>, statistic: f64, threshold: f64, n: u64) -> Self {
        TestReport {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic <= threshold,
            n,
            seeds: Vec::new(),
            detail: String::new(),
        }
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Per-component sample mean and standard error of the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: DVector<f64>,
    pub std_err: DVector<f64>,
}

/// Mean and standard error of `samples` (all of one length, at least two).
pub fn summarize(samples: &[DVector<f64>]) -> Result<SampleSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::param(format!("need at least two samples, got {n}")));
    }
    let d = samples[0].len();
    if samples.iter().any(|x| x.len() != d) {
        return Err(Error::param("samples differ in dimension"));
    }
    let mean = samples.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
    let mut ss = DVector::<f64>::zeros(d);
    for x in samples {
        let dx = x - &mean;
        ss += dx.component_mul(&dx);
    }
    let std_err = (ss / ((n - 1) as f64 * n as f64)).map(f64::sqrt);
    Ok(SampleSummary { n, mean, std_err })
}

/// z-test of `E[sample] = exact`, component by component. The statistic is
/// `max |mean - exact| / SE`; a component with zero spread whose mean differs
/// from `exact` gets an infinite z.
pub fn unbiasedness_test(name: &str, samples: &[DVector<f64>], exact: &DVector<f64>, z_max: f64) -> Result<TestReport> {
    if samples.len() < 100 {
        return Err(Error::param(format!("unbiasedness test needs n >= 100, got {}", samples.len())));
    }
    if exact.len() != samples[0].len() {
        return Err(Error::param("exact value and samples differ in dimension"));
    }
    let sum = summarize(samples)?;
    let mut worst = 0.0f64;
    let mut worst_i = 0;
    let mut degenerate = Vec::new();
    for i in 0..exact.len() {
        let diff = sum.mean[i] - exact[i];
        let tol = 1e-12 * (1.0 + exact[i].abs());
        let z = if sum.std_err[i] > 0.0 {
            diff.abs() / sum.std_err[i]
        } else if diff.abs() <= tol {
            0.0
        } else {
            degenerate.push(i);
            f64::INFINITY
        };
        if z > worst {
            worst = z;
            worst_i = i;
        }
    }
    let mut detail = format!(
        "worst component {worst_i}: mean {:.6e}, exact {:.6e}, se {:.3e}",
        sum.mean[worst_i], exact[worst_i], sum.std_err[worst_i]
    );
    if !degenerate.is_empty() {
        detail.push_str(&format!("; zero variance with mean != exact at {degenerate:?}"));
    }
    Ok(TestReport::new(name, worst, z_max, sum.n as u64).with_detail(detail))
}

/// `cos(a, b)`, or `None` when either vector is zero.
pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let (na, nb) = (a.norm(), b.norm());
    (na > 0.0 && nb > 0.0).then(|| a.dot(b) / (na * nb))
}

/// `||g_bar||^2 - tr(S) / B` over `b` independent estimates, where `S` is the
/// unbiased sample covariance. Unbiased for `||grad J||^2`; may be negative.
#[allow(clippy::too_many_arguments)]
pub fn grad_norm_sq_estimate<E, P>(
    env: &E,
    policy: &P,
    theta: &Theta,
    kind: GradientKind,
    b: usize,
    key: StreamKey,
    exec: Execution,
) -> Result<f64>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    if b < 2 {
        return Err(Error::param(format!("B must be at least 2, got {b}")));
    }
    let gs: Vec<DVector<f64>> =
        eval_pg_batch(kind, env, policy, theta, key, b, exec)?.into_iter().map(|g| g.vector).collect();
    let sum = summarize(&gs)?;
    // std_err^2 = s^2 / B, so tr(S) / B is the sum of squared standard errors.
    Ok(sum.mean.norm_squared() - sum.std_err.norm_squared())
}

/// Monte-Carlo estimate of `E[(v^T g)^2]` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CncEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

/// `E[(v^T g)^2]` from `n` independent estimates. `direction` must have unit norm.
#[allow(clippy::too_many_arguments)]
pub fn cnc_estimate<E, P>(
    env: &E,
    policy: &P,
    theta: &Theta,
    kind: GradientKind,
    direction: &DVector<f64>,
    n: usize,
    key: StreamKey,
    exec: Execution,
) -> Result<CncEstimate>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("direction must be a unit vector, norm is {}", direction.norm())));
    }
    if direction.len() != policy.dim() {
        return Err(Error::param("direction and theta differ in dimension"));
    }
    let proj: Vec<DVector<f64>> = eval_pg_batch(kind, env, policy, theta, key, n, exec)?
        .into_iter()
        .map(|g| DVector::from_element(1, direction.dot(&g.vector).powi(2)))
        .collect();
    let sum = summarize(&proj)?;
    Ok(CncEstimate { mean: sum.mean[0], std_err: sum.std_err[0], n })
}

/// `(1/n) sum score score^T` over `n` draws `(s, a)` from the discounted
/// occupancy measure.
pub fn estimate_fisher<E, P>(
    env: &E,
    policy: &P,
    theta: &Theta,
    n: usize,
    key: StreamKey,
    exec: Execution,
) -> Result<DMatrix<f64>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    let d = policy.dim();
    if n < d {
        return Err(Error::param(format!("need n >= d = {d} samples, got {n}")));
    }
    let first = key.index;
    let scores = try_map_indexed(n, exec, |i| {
        let k = key.with_index(first + i as u64);
        let smp = rollout_to_occupancy_sample(
            env,
            policy,
            theta,
            &mut k.rng(Purpose::OccupancyHorizon),
            &mut k.rng(Purpose::OuterTrajectory),
        )?;
        policy.score(theta, &smp.state, &smp.action)
    })?;
    let mut f = DMatrix::zeros(d, d);
    for sc in &scores {
        f.ger(1.0, sc, sc, 1.0);
    }
    f /= n as f64;
    Ok((&f + f.transpose()) * 0.5)
}

/// Least-squares slope of `ln(value)` against `ln(k)` over the last `window`
/// points of `series`.
pub fn rate_fit(series: &[(f64, f64)], window: usize) -> Result<f64> {
    let w = window.min(series.len());
    if w < 10 {
        return Err(Error::param(format!("rate fit needs at least 10 points, got {w}")));
    }
    let tail = &series[series.len() - w..];
    if let Some((k, v)) = tail.iter().find(|(k, v)| !(*k > 0.0 && *v > 0.0 && k.is_finite() && v.is_finite())) {
        return Err(Error::param(format!("rate fit needs positive finite points, got ({k}, {v})")));
    }
    let xs: Vec<f64> = tail.iter().map(|(k, _)| k.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / w as f64;
    let my = ys.iter().sum::<f64>() / w as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::param("rate fit needs at least two distinct k"));
    }
    Ok(sxy / sxx)
}

/// `out[k] = mean(values[0..=k])`.
pub fn running_mean(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            acc += v;
            acc / (i + 1) as f64
        })
        .collect()
}

/// Component-wise mean of equally long series.
pub fn mean_series(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = series.first().ok_or_else(|| Error::param("no series to average"))?;
    if series.iter().any(|s| s.len() != first.len()) {
        return Err(Error::param("series differ in length"));
    }
    Ok((0..first.len()).map(|i| series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::TabularMdp;
    use crate::oracle;
    use crate::policy::TabularSoftmax;
    use proptest::prelude::*;

    fn chain() -> TabularMdp {
        let transition = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        TabularMdp::new(2, 2, transition, vec![1.0, 0.5, 0.2, 0.8], 0.9, 0).unwrap()
    }

    #[test]
    fn deterministic_exact_sampler_passes() {
        let exact = DVector::from_vec(vec![1.0, -2.0]);
        let samples = vec![exact.clone(); 100];
        let r = unbiasedness_test("det", &samples, &exact, 4.0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn constant_bias_fails() {
        let exact = DVector::from_vec(vec![1.0]);
        let samples: Vec<_> = (0..200).map(|i| DVector::from_vec(vec![1.0 + (i % 2) as f64 - 0.5])).collect();
        let se = summarize(&samples).unwrap().std_err[0];
        let biased: Vec<_> = samples.iter().map(|x| x.add_scalar(10.0 * se)).collect();
        assert!(unbiasedness_test("ok", &samples, &exact, 4.0).unwrap().pass);
        let r = unbiasedness_test("biased", &biased, &exact, 4.0).unwrap();
        assert!(!r.pass && (r.statistic - 10.0).abs() < 1e-6);
    }

    #[test]
    fn zero_variance_mismatch_fails() {
        let samples = vec![DVector::from_vec(vec![2.0]); 100];
        let r = unbiasedness_test("z", &samples, &DVector::from_vec(vec![1.0]), 4.0).unwrap();
        assert!(!r.pass && r.statistic.is_infinite());
        assert!(r.detail.contains("zero variance"));
    }

    #[test]
    fn small_n_rejected() {
        let samples = vec![DVector::from_vec(vec![1.0]); 99];
        assert!(unbiasedness_test("n", &samples, &DVector::from_vec(vec![1.0]), 4.0).is_err());
    }

    #[test]
    fn rate_fit_synthetic() {
        let s: Vec<_> = (1..=100).map(|k| (k as f64, (k as f64).powf(-0.5))).collect();
        assert!((rate_fit(&s, 50).unwrap() + 0.5).abs() < 1e-9);
        let c: Vec<_> = (1..=100).map(|k| (k as f64, 3.0)).collect();
        assert!(rate_fit(&c, 100).unwrap().abs() < 1e-9);
        let bad: Vec<_> = (1..=20).map(|k| (k as f64, 0.0)).collect();
        assert!(rate_fit(&bad, 20).is_err());
        assert!(rate_fit(&s[..9], 9).is_err());
    }

    #[test]
    fn cnc_sign_invariant_and_unit_checked() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let th = Theta::zeros(4);
        let v = DVector::from_vec(vec![0.5, -0.5, 0.5, -0.5]);
        let key = StreamKey::new(1, 0, 0);
        let a = cnc_estimate(&mdp, &pol, &th, GradientKind::QHat, &v, 200, key, Execution::Parallel).unwrap();
        let b = cnc_estimate(&mdp, &pol, &th, GradientKind::QHat, &(-&v), 200, key, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(cnc_estimate(&mdp, &pol, &th, GradientKind::QHat, &(&v * 2.0), 200, key, Execution::Parallel).is_err());
        // The per-state all-ones directions are orthogonal to every score.
        let ones = DVector::from_vec(vec![0.5; 4]);
        let z = cnc_estimate(&mdp, &pol, &th, GradientKind::QHat, &ones, 200, key, Execution::Parallel).unwrap();
        assert!(z.mean < 1e-25);
    }

    #[test]
    fn grad_norm_requires_two() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let r = grad_norm_sq_estimate(
            &mdp,
            &pol,
            &Theta::zeros(4),
            GradientKind::QHat,
            1,
            StreamKey::new(0, 0, 0),
            Execution::Parallel,
        );
        assert!(r.is_err());
    }

    #[test]
    fn fisher_estimate_is_symmetric_psd_and_close() {
        let mdp = chain();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let th = Theta::from_vec(vec![0.3, -0.2, 0.1, 0.4]);
        let f = estimate_fisher(&mdp, &pol, &th, 20_000, StreamKey::new(5, 0, 0), Execution::Parallel).unwrap();
        assert_eq!(f, f.transpose());
        assert!(f.clone().symmetric_eigenvalues().iter().all(|&l| l > -1e-10));
        let exact = oracle::exact_fisher(&mdp, &pol, &th).unwrap();
        assert!((f - exact).norm() < 0.03);
    }

    proptest! {
        #[test]
        fn running_mean_last_is_mean(v in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
            let r = running_mean(&v);
            let m = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((r[v.len() - 1] - m).abs() < 1e-9);
        }
    }
}
