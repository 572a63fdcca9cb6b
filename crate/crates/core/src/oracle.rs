//! Exact quantities on tabular MDPs by direct linear solves, plus generic
//! finite-difference derivatives.

use crate::error::{Error, Result};
use crate::mdp::{Environment, TabularMdp};
use crate::policy::{Policy, Theta};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Step used for finite-difference gradients.
pub const FD_GRADIENT_STEP: f64 = 1e-5;
/// Step used for finite-difference Hessians.
pub const FD_HESSIAN_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    /// `V(s)`.
    pub v: DVector<f64>,
    /// `Q(s, a)`, states as rows.
    pub q: DMatrix<f64>,
    /// Normalised discounted occupancy `rho(s, a)`, states as rows.
    pub occupancy: DMatrix<f64>,
    /// `J(theta) = V(s_0)`.
    pub j_theta: f64,
}

fn check_policy<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<()> {
    policy.check_theta(theta)?;
    // Fails when the policy does not cover every state-action pair.
    policy.log_prob(theta, &(mdp.n_states() - 1), &(mdp.n_actions() - 1))?;
    Ok(())
}

/// `pi(a | s)` as an `n_states x n_actions` table.
pub fn policy_table<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<DMatrix<f64>> {
    check_policy(mdp, policy, theta)?;
    let mut pi = DMatrix::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            pi[(s, a)] = policy.log_prob(theta, &s, &a)?.exp();
        }
    }
    Ok(pi)
}

/// `P_pi(s, s') = sum_a pi(a|s) P(s'|s, a)`.
fn state_kernel(mdp: &TabularMdp, pi: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mdp.n_states();
    DMatrix::from_fn(n, n, |s, next| (0..mdp.n_actions()).map(|a| pi[(s, a)] * mdp.p(s, a, next)).sum())
}

fn solve(m: DMatrix<f64>, rhs: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let x = m.lu().solve(&rhs).ok_or_else(|| Error::numeric(format!("singular system while solving for {what}")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite solution for {what}")));
    }
    Ok(x)
}

pub fn exact_values<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<ExactSolution> {
    let pi = policy_table(mdp, policy, theta)?;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let kernel = state_kernel(mdp, &pi);
    let r_pi = DVector::from_fn(ns, |s, _| (0..na).map(|a| pi[(s, a)] * mdp.r(s, a)).sum());
    let sys = DMatrix::identity(ns, ns) - &kernel * g;
    let v = solve(sys.clone(), DMatrix::from_column_slice(ns, 1, r_pi.as_slice()), "V")?.column(0).into_owned();
    let q = DMatrix::from_fn(ns, na, |s, a| mdp.r(s, a) + g * (0..ns).map(|n| mdp.p(s, a, n) * v[n]).sum::<f64>());
    let mut start = DMatrix::zeros(ns, 1);
    start[(mdp.start(), 0)] = 1.0 - g;
    let d = solve(sys.transpose(), start, "occupancy")?;
    let mut occupancy = DMatrix::from_fn(ns, na, |s, a| d[(s, 0)].max(0.0) * pi[(s, a)]);
    let total = occupancy.sum();
    occupancy /= total;
    Ok(ExactSolution { j_theta: v[mdp.start()], v, q, occupancy })
}

pub fn exact_occupancy<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<DMatrix<f64>> {
    Ok(exact_values(mdp, policy, theta)?.occupancy)
}

pub fn j_theta<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<f64> {
    Ok(exact_values(mdp, policy, theta)?.j_theta)
}

/// Scores of every pair; `None` where the occupancy is zero, which also covers
/// actions whose probability underflowed.
fn scores<P: Policy<usize, usize>>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &Theta,
    sol: &ExactSolution,
) -> Result<Vec<Vec<Option<DVector<f64>>>>> {
    (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| if sol.occupancy[(s, a)] == 0.0 { Ok(None) } else { policy.score(theta, &s, &a).map(Some) })
                .collect()
        })
        .collect()
}

/// `grad J = (1-gamma)^{-1} sum_{s,a} rho(s,a) Q(s,a) score(a|s)`.
pub fn exact_policy_gradient<P: Policy<usize, usize>>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &Theta,
) -> Result<DVector<f64>> {
    let sol = exact_values(mdp, policy, theta)?;
    gradient_from(mdp, policy, theta, &sol, &sol.q)
}

/// The same sum with `weights(s, a)` in place of `Q(s, a)`; with
/// `Q(s,a) - V(s)` this is the advantage form of the gradient.
pub fn gradient_from<P: Policy<usize, usize>>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &Theta,
    sol: &ExactSolution,
    weights: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let sc = scores(mdp, policy, theta, sol)?;
    let mut g = DVector::zeros(policy.dim());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if let Some(score) = &sc[s][a] {
                g.axpy(sol.occupancy[(s, a)] * weights[(s, a)], score, 1.0);
            }
        }
    }
    Ok(g / (1.0 - mdp.gamma()))
}

/// `grad_theta Q(s, a)` for every pair, as rows indexed by `s * n_actions + a`.
pub fn exact_q_gradient<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<DMatrix<f64>> {
    let sol = exact_values(mdp, policy, theta)?;
    q_gradient_from(mdp, policy, theta, &sol)
}

fn q_gradient_from<P: Policy<usize, usize>>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &Theta,
    sol: &ExactSolution,
) -> Result<DMatrix<f64>> {
    let (ns, na, g, d) = (mdp.n_states(), mdp.n_actions(), mdp.gamma(), policy.dim());
    let pi = policy_table(mdp, policy, theta)?;
    let n = ns * na;
    // M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s').
    let m = DMatrix::from_fn(n, n, |i, j| mdp.p(i / na, i % na, j / na) * pi[(j / na, j % na)]);
    let mut c = DMatrix::zeros(n, d);
    for s in 0..ns {
        for a in 0..na {
            if pi[(s, a)] > 0.0 {
                let sc = policy.score(theta, &s, &a)?;
                c.row_mut(s * na + a).copy_from(&(sc.transpose() * sol.q[(s, a)]));
            }
        }
    }
    let sys = DMatrix::identity(n, n) - &m * g;
    solve(sys, &m * c * g, "grad Q")
}

/// Exact Hessian of `J`:
/// `(1-gamma)^{-1} sum rho [Q s s^T + Q hess log pi + s gradQ^T + gradQ s^T]`.
pub fn exact_hessian<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<DMatrix<f64>> {
    let sol = exact_values(mdp, policy, theta)?;
    let dq = q_gradient_from(mdp, policy, theta, &sol)?;
    let (na, d) = (mdp.n_actions(), policy.dim());
    let mut h1 = DMatrix::zeros(d, d);
    let mut h2 = DMatrix::zeros(d, d);
    let mut h12 = DMatrix::zeros(d, d);
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let w = sol.occupancy[(s, a)];
            if w == 0.0 {
                continue;
            }
            let sc = policy.score(theta, &s, &a)?;
            let q = sol.q[(s, a)];
            h1 += &sc * sc.transpose() * (w * q);
            h2 += policy.score_hessian(theta, &s, &a)? * (w * q);
            h12 += &sc * dq.row(s * na + a) * w;
        }
    }
    let h = (h1 + h2 + &h12 + h12.transpose()) / (1.0 - mdp.gamma());
    // Symmetric up to rounding; make it exact.
    Ok((&h + h.transpose()) * 0.5)
}

/// `sum_{s,a} rho(s,a) score score^T`.
pub fn exact_fisher<P: Policy<usize, usize>>(mdp: &TabularMdp, policy: &P, theta: &Theta) -> Result<DMatrix<f64>> {
    let sol = exact_values(mdp, policy, theta)?;
    let d = policy.dim();
    let mut f = DMatrix::zeros(d, d);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let w = sol.occupancy[(s, a)];
            if w > 0.0 {
                let sc = policy.score(theta, &s, &a)?;
                f += &sc * sc.transpose() * w;
            }
        }
    }
    Ok(f)
}

/// Optimal action values and the greedy policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub q_star: DMatrix<f64>,
    /// Greedy action per state; ties go to the lowest index.
    pub greedy: Vec<usize>,
    pub sweeps: usize,
}

pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<OptimalSolution> {
    if !(tol > 0.0) {
        return Err(Error::param(format!("tolerance must be positive, got {tol}")));
    }
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut q = DMatrix::<f64>::zeros(ns, na);
    let mut sweeps = 0;
    loop {
        let v: Vec<f64> = (0..ns).map(|s| q.row(s).max()).collect();
        let next =
            DMatrix::from_fn(ns, na, |s, a| mdp.r(s, a) + g * (0..ns).map(|n| mdp.p(s, a, n) * v[n]).sum::<f64>());
        let resid = (&next - &q).amax();
        q = next;
        sweeps += 1;
        if resid * g <= tol || resid == 0.0 {
            break;
        }
        if sweeps > 10_000_000 {
            return Err(Error::numeric("value iteration did not converge"));
        }
    }
    let greedy = (0..ns)
        .map(|s| {
            let best = q.row(s).max();
            let tie = 1e-9 * (1.0 + best.abs());
            (0..na).find(|a| q[(s, *a)] >= best - tie).unwrap_or(0)
        })
        .collect();
    Ok(OptimalSolution { q_star: q, greedy, sweeps })
}

/// Central-difference gradient of `f` at `theta`.
pub fn fd_gradient<F>(f: F, theta: &Theta, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&Theta) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::param("step must be positive"));
    }
    let mut g = DVector::zeros(theta.len());
    let mut t = theta.clone();
    for i in 0..theta.len() {
        t[i] = theta[i] + h;
        let fp = finite(f(&t)?)?;
        t[i] = theta[i] - h;
        let fm = finite(f(&t)?)?;
        t[i] = theta[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central second differences of `f` at `theta`, symmetrised.
pub fn fd_hessian<F>(f: F, theta: &Theta, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&Theta) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::param("step must be positive"));
    }
    let d = theta.len();
    let mut out = DMatrix::zeros(d, d);
    let eval = |i: usize, si: f64, j: usize, sj: f64| -> Result<f64> {
        let mut t = theta.clone();
        t[i] += si * h;
        t[j] += sj * h;
        finite(f(&t)?)
    };
    for i in 0..d {
        for j in i..d {
            let v = (eval(i, 1.0, j, 1.0)? - eval(i, 1.0, j, -1.0)? - eval(i, -1.0, j, 1.0)? + eval(i, -1.0, j, -1.0)?)
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok((&out + out.transpose()) * 0.5)
}

fn finite(x: f64) -> Result<f64> {
    crate::error::ensure_finite(x, "objective")
}

/// Bellman residual `||V - (R_pi + gamma P_pi V)||_inf`.
pub fn bellman_residual<P: Policy<usize, usize>>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &Theta,
    v: &DVector<f64>,
) -> Result<f64> {
    let pi = policy_table(mdp, policy, theta)?;
    let kernel = state_kernel(mdp, &pi);
    let r_pi = DVector::from_fn(mdp.n_states(), |s, _| (0..mdp.n_actions()).map(|a| pi[(s, a)] * mdp.r(s, a)).sum());
    Ok((v - (r_pi + kernel * v * mdp.gamma())).amax())
}

/// Upper bound on value-iteration sweeps: `ceil(log(tol (1-gamma) / U_R) / log gamma)`.
pub fn value_iteration_sweep_bound(mdp: &TabularMdp, tol: f64) -> usize {
    let u_r = mdp.reward_bounds().upper_abs().max(f64::MIN_POSITIVE);
    let g = mdp.gamma();
    ((tol * (1.0 - g) / u_r).ln() / g.ln()).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TabularSoftmax;
    use crate::rng::seeded;
    use rand::Rng;

    fn chain() -> TabularMdp {
        TabularMdp::new(2, 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.2, 0.8], vec![1.0, 2.0, 3.0, 1.5], 0.9, 0).unwrap()
    }

    fn random_theta(d: usize, seed: u64) -> Theta {
        let mut rng = seeded(seed);
        Theta::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn single_state_geometric_value() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.9, 0).unwrap();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let sol = exact_values(&mdp, &pi, &Theta::zeros(1)).unwrap();
        assert!((sol.v[0] - 10.0).abs() < 1e-12);
        assert!((sol.occupancy[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_is_flat() {
        let flat = TabularMdp::new(2, 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.2, 0.8], vec![2.0; 4], 0.9, 0).unwrap();
        let pi = TabularSoftmax::for_mdp(&flat);
        let theta = random_theta(4, 1);
        let sol = exact_values(&flat, &pi, &theta).unwrap();
        assert!(sol.v.iter().all(|v| (v - 20.0).abs() < 1e-10));
        assert!(exact_policy_gradient(&flat, &pi, &theta).unwrap().norm() < 1e-12);
        assert!(exact_q_gradient(&flat, &pi, &theta).unwrap().amax() < 1e-10);
    }

    #[test]
    fn solution_invariants() {
        let mdp = chain();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let theta = random_theta(4, 2);
        let sol = exact_values(&mdp, &pi, &theta).unwrap();
        assert!(bellman_residual(&mdp, &pi, &theta, &sol.v).unwrap() <= 1e-10);
        assert!((sol.occupancy.sum() - 1.0).abs() < 1e-10);
        assert!(sol.occupancy.iter().all(|x| *x >= 0.0));
        assert!(sol.q.amax() <= 3.0 / 0.1);
    }

    #[test]
    fn tiny_gamma_occupancy_concentrates_on_start() {
        let mdp = chain().with_gamma(1e-6).unwrap();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let occ = exact_occupancy(&mdp, &pi, &Theta::zeros(4)).unwrap();
        let tv = 0.5 * ((occ[(0, 0)] - 0.5).abs() + (occ[(0, 1)] - 0.5).abs() + occ[(1, 0)] + occ[(1, 1)]);
        assert!(tv < 1e-5);
    }

    #[test]
    fn gradient_matches_finite_differences_and_advantage_form() {
        let mdp = chain();
        let pi = TabularSoftmax::for_mdp(&mdp);
        for seed in 0..20 {
            let theta = random_theta(4, 10 + seed);
            let g = exact_policy_gradient(&mdp, &pi, &theta).unwrap();
            let fd = fd_gradient(|t| j_theta(&mdp, &pi, t), &theta, FD_GRADIENT_STEP).unwrap();
            assert!((&g - &fd).norm() <= 1e-6 * (1.0 + g.norm()));
            let sol = exact_values(&mdp, &pi, &theta).unwrap();
            let adv = DMatrix::from_fn(2, 2, |s, a| sol.q[(s, a)] - sol.v[s]);
            let ga = gradient_from(&mdp, &pi, &theta, &sol, &adv).unwrap();
            assert!((&g - &ga).amax() < 1e-12);
        }
    }

    #[test]
    fn q_gradient_matches_finite_differences() {
        let mdp = chain();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let theta = random_theta(4, 3);
        let dq = exact_q_gradient(&mdp, &pi, &theta).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                let fd = fd_gradient(|t| Ok(exact_values(&mdp, &pi, t)?.q[(s, a)]), &theta, FD_GRADIENT_STEP).unwrap();
                let row = dq.row(s * 2 + a).transpose();
                assert!((&row - &fd).norm() <= 1e-5 * (1.0 + row.norm()));
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mdp = chain();
        let pi = TabularSoftmax::for_mdp(&mdp);
        for seed in 0..5 {
            let theta = random_theta(4, 30 + seed);
            let h = exact_hessian(&mdp, &pi, &theta).unwrap();
            assert_eq!(h, h.transpose());
            let fd = fd_hessian(|t| j_theta(&mdp, &pi, t), &theta, FD_HESSIAN_STEP).unwrap();
            assert!((&h - &fd).norm() / fd.norm().max(1.0) <= 1e-3, "{h} vs {fd}");
        }
    }

    #[test]
    fn value_iteration_agrees_with_linear_solve_on_optimum() {
        let mdp = chain();
        let opt = value_iteration(&mdp, 1e-12).unwrap();
        assert!(opt.sweeps <= value_iteration_sweep_bound(&mdp, 1e-12));
        // Evaluate the greedy policy exactly via near-deterministic logits.
        let pi = TabularSoftmax::for_mdp(&mdp);
        let theta = Theta::from_fn(4, |i, _| if opt.greedy[i / 2] == i % 2 { 40.0 } else { -40.0 });
        let sol = exact_values(&mdp, &pi, &theta).unwrap();
        assert!((&sol.q - &opt.q_star).amax() < 1e-8);
    }

    #[test]
    fn policy_evaluation_matches_iteration() {
        let mdp = chain();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let theta = Theta::zeros(4);
        let sol = exact_values(&mdp, &pi, &theta).unwrap();
        let table = policy_table(&mdp, &pi, &theta).unwrap();
        let kernel = state_kernel(&mdp, &table);
        let r_pi = DVector::from_fn(2, |s, _| (0..2).map(|a| table[(s, a)] * mdp.r(s, a)).sum());
        let mut v = DVector::zeros(2);
        for _ in 0..2000 {
            v = &r_pi + &kernel * &v * 0.9;
        }
        assert!((&v - &sol.v).amax() < 1e-8);
    }

    #[test]
    fn constant_reward_greedy_is_action_zero() {
        let mdp = TabularMdp::new(2, 3, vec![0.5; 12], vec![1.0; 6], 0.8, 0).unwrap();
        assert_eq!(value_iteration(&mdp, 1e-12).unwrap().greedy, vec![0, 0]);
    }

    #[test]
    fn finite_differences_on_quadratic_and_linear() {
        let theta = Theta::from_column_slice(&[0.3, -1.2, 2.0]);
        let g = fd_gradient(|t| Ok(t.norm_squared()), &theta, 1e-5).unwrap();
        assert!((&g - &theta * 2.0).amax() < 1e-8);
        let h = fd_hessian(|t| Ok(t.norm_squared()), &theta, 1e-3).unwrap();
        assert!((&h - DMatrix::identity(3, 3) * 2.0).amax() < 1e-6);
        let h = fd_hessian(|t| Ok(3.0 * t[0] - t[2]), &theta, 1e-3).unwrap();
        assert!(h.amax() < 1e-8);
        assert!(fd_gradient(|_| Ok(f64::NAN), &theta, 1e-5).is_err());
    }

    #[test]
    fn fd_steps_agree_on_j() {
        let mdp = chain();
        let pi = TabularSoftmax::for_mdp(&mdp);
        let theta = random_theta(4, 4);
        let a = fd_gradient(|t| j_theta(&mdp, &pi, t), &theta, 1e-4).unwrap();
        let b = fd_gradient(|t| j_theta(&mdp, &pi, t), &theta, 1e-5).unwrap();
        assert!((&a - &b).amax() < 1e-5);
    }
}
