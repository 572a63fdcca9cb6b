//! The MRPG parameter schedule: closed-form values, the constraint table
//! they must satisfy, and the search for constants that make it feasible.

use crate::constants::ProblemConstants;
use crate::error::{Error, Result};
use crate::estimators::GradientKind;
use serde::{Deserialize, Serialize};

/// The five problem-level quantities the schedule depends on, plus the
/// optimality-gap bound `J* - J(theta_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInputs {
    /// Almost-sure gradient-estimate bound `ell`.
    pub ell: f64,
    /// Gradient Lipschitz constant `L`.
    pub l: f64,
    /// Correlated-negative-curvature floor `eta`.
    pub eta: f64,
    /// Hessian Lipschitz constant `rho`.
    pub rho: f64,
    pub ell_g: f64,
    pub j_gap: f64,
}

impl ScheduleInputs {
    /// Uses `2 U_R / (1 - gamma)` for the gap unless `j_gap` is given.
    pub fn from_constants(c: &ProblemConstants, kind: GradientKind, j_gap: Option<f64>) -> Self {
        ScheduleInputs {
            ell: c.ell(kind),
            l: c.l,
            eta: c.eta(kind),
            rho: c.rho,
            ell_g: c.ell_g(kind),
            j_gap: j_gap.unwrap_or(2.0 * c.base.u_r / (1.0 - c.base.gamma)),
        }
    }

    /// `ell = L = eta = rho = ell_g = j_gap = 1`.
    pub fn normalized() -> Self {
        ScheduleInputs { ell: 1.0, l: 1.0, eta: 1.0, rho: 1.0, ell_g: 1.0, j_gap: 1.0 }
    }
}

/// Free constants of the schedule. `c` is the constant of the `k_thre`
/// logarithmic condition and is also used as `c4` in its value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConstants {
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
    pub c5: f64,
    pub c_prime: f64,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        ScheduleConstants { c1: 1.0, c2: 0.5, c4: 8.0, c5: 2.0, c_prime: 1.0 }
    }
}

/// One row of the constraint table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub name: String,
    pub lhs: f64,
    pub relation: String,
    pub rhs: f64,
    pub holds: bool,
}

impl ConstraintRow {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        ConstraintRow { name: name.into(), lhs, relation: "<=".into(), rhs, holds: lhs <= rhs * (1.0 + 1e-12) }
    }

    fn ge(name: &str, lhs: f64, rhs: f64) -> Self {
        ConstraintRow { name: name.into(), lhs, relation: ">=".into(), rhs, holds: lhs * (1.0 + 1e-12) >= rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrpgSchedule {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k_thre: u64,
    pub j_thre: f64,
    /// Iteration budget, saturating at `u64::MAX`.
    pub big_k: u64,
    /// The unrounded budget.
    pub big_k_exact: f64,
    /// Curvature scale `sqrt(rho * epsilon)`.
    pub lambda: f64,
    pub constants: ScheduleConstants,
    pub inputs: ScheduleInputs,
    pub fixed_point_rounds: u32,
    pub constraint_report: Vec<ConstraintRow>,
}

impl MrpgSchedule {
    pub fn feasible(&self) -> bool {
        self.constraint_report.iter().all(|r| r.holds)
    }

    /// The loop parameters actually run, with the budget capped at `max_iters`.
    pub fn plan(&self, max_iters: Option<u64>) -> MrpgPlan {
        let iterations = max_iters.map_or(self.big_k, |m| m.min(self.big_k));
        MrpgPlan {
            alpha: self.alpha,
            beta: self.beta,
            k_thre: self.k_thre,
            iterations,
            truncated: iterations < self.big_k,
        }
    }
}

/// Parameters of one MRPG run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrpgPlan {
    pub alpha: f64,
    pub beta: f64,
    pub k_thre: u64,
    pub iterations: u64,
    /// Whether `iterations` is below the theoretical budget.
    pub truncated: bool,
}

impl MrpgPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::param("MRPG steps must be positive and finite"));
        }
        if self.k_thre == 0 {
            return Err(Error::param("k_thre must be at least 1"));
        }
        Ok(())
    }
}

const MAX_FIXED_POINT_ROUNDS: u32 = 100;

fn check_inputs(inputs: &ScheduleInputs, epsilon: f64, delta: f64, c: &ScheduleConstants) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("epsilon and delta must lie in (0, 1), got {epsilon}, {delta}")));
    }
    let named = [
        ("ell", inputs.ell),
        ("L", inputs.l),
        ("rho", inputs.rho),
        ("ell_g", inputs.ell_g),
        ("j_gap", inputs.j_gap),
        ("c1", c.c1),
        ("c2", c.c2),
        ("c4", c.c4),
        ("c5", c.c5),
        ("c'", c.c_prime),
    ];
    for (name, v) in named {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::param(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if !(inputs.eta.is_finite() && inputs.eta >= 0.0) {
        return Err(Error::param(format!("eta must be non-negative, got {}", inputs.eta)));
    }
    Ok(())
}

/// Materialises the schedule for the given constants and reports every
/// constraint. Fails with [`Error::Infeasible`] (carrying the schedule) when
/// any row is violated, when `eta = 0`, or when `k_thre` cannot be closed.
pub fn build_schedule(
    inputs: ScheduleInputs,
    epsilon: f64,
    delta: f64,
    consts: ScheduleConstants,
) -> Result<MrpgSchedule> {
    check_inputs(&inputs, epsilon, delta, &consts)?;
    if inputs.eta == 0.0 {
        return Err(Error::Infeasible {
            reason: "CNC degenerate: eta = 0 (rewards are not bounded away from zero)".into(),
            report: None,
        });
    }
    let ScheduleInputs { ell, l, eta, rho, ell_g, j_gap } = inputs;
    let ScheduleConstants { c1, c2, c4, c5, c_prime } = consts;
    let lambda = (rho * epsilon).sqrt();
    let base = 2.0 * ell * ell * l;
    let beta = c1 * epsilon * epsilon / base;
    let j_thre = c2 * eta * epsilon.powi(4) / base;
    let alpha_at = |k: f64| beta / k.sqrt();
    let log_arg = |k: f64| l * ell_g / (eta * beta * alpha_at(k) * lambda);
    let required = |k: f64| c4 * log_arg(k).ln() / (alpha_at(k) * lambda);
    // Small-step curvature condition, rearranged as a lower bound on k.
    let curvature_k = (24.0 * l * ell.powi(3) * rho / (c_prime * eta * lambda.powi(3))).powi(2);

    let mut k = curvature_k.ceil().max(1.0);
    let mut rounds = 0;
    loop {
        let need = required(k);
        if !need.is_finite() {
            return Err(Error::Infeasible {
                reason: format!("k_thre condition is not finite at k = {k}"),
                report: None,
            });
        }
        if need <= k {
            break;
        }
        rounds += 1;
        if rounds > MAX_FIXED_POINT_ROUNDS {
            return Err(Error::Infeasible {
                reason: format!("k_thre fixed point did not close in {MAX_FIXED_POINT_ROUNDS} rounds"),
                report: None,
            });
        }
        k = k.max(need.ceil());
        if k >= 2f64.powi(63) {
            return Err(Error::Infeasible { reason: format!("k_thre overflows ({k:e})"), report: None });
        }
    }
    let k_thre = k as u64;
    let alpha = alpha_at(k);
    let big_k_exact = (c5 * j_gap * k / (delta * j_thre)).max(k);
    let big_k = if big_k_exact >= u64::MAX as f64 { u64::MAX } else { big_k_exact.ceil() as u64 };

    let report = vec![
        ConstraintRow::le("beta <= eps^2/(2 ell^2 L)", beta, epsilon * epsilon / base),
        ConstraintRow::le("beta <= sqrt(J_thre delta/(2 L ell^2))", beta, (j_thre * delta / base).sqrt()),
        ConstraintRow::le(
            "beta <= eta lambda^2/(24 L ell^3 rho)",
            beta,
            eta * lambda * lambda / (24.0 * l * ell.powi(3) * rho),
        ),
        ConstraintRow::le("J_thre <= beta eps^2/2", j_thre, beta * epsilon * epsilon / 2.0),
        ConstraintRow::le(
            "J_thre <= eta beta lambda^2/(48 ell rho)",
            j_thre,
            eta * beta * lambda * lambda / (48.0 * ell * rho),
        ),
        ConstraintRow::le("alpha <= beta/sqrt(k_thre)", alpha, beta / k.sqrt()),
        ConstraintRow::le(
            "alpha <= c' eta beta lambda^3/(24 L ell^3 rho)",
            alpha,
            c_prime * eta * beta * lambda.powi(3) / (24.0 * l * ell.powi(3) * rho),
        ),
        ConstraintRow::ge(
            "k_thre >= c log(L ell_g/(eta beta alpha lambda))/(alpha lambda)",
            k,
            c4 * log_arg(k).ln() / (alpha * lambda),
        ),
        ConstraintRow::ge("K >= 2 gap k_thre/(delta J_thre)", big_k_exact, 2.0 * j_gap * k / (delta * j_thre)),
        ConstraintRow::ge("K >= k_thre", big_k_exact, k),
        ConstraintRow::le("alpha < beta", alpha, beta),
    ];
    let schedule = MrpgSchedule {
        epsilon,
        delta,
        alpha,
        beta,
        k_thre,
        j_thre,
        big_k,
        big_k_exact,
        lambda,
        constants: consts,
        inputs,
        fixed_point_rounds: rounds,
        constraint_report: report,
    };
    if let Some(row) = schedule.constraint_report.iter().find(|r| !r.holds) {
        return Err(Error::Infeasible {
            reason: format!("constraint violated: {} ({:e} vs {:e})", row.name, row.lhs, row.rhs),
            report: Some(Box::new(schedule)),
        });
    }
    Ok(schedule)
}

/// The schedule for a problem's constants and estimator kind.
pub fn build_mrpg_schedule(
    constants: &ProblemConstants,
    kind: GradientKind,
    epsilon: f64,
    delta: f64,
    j_gap_bound: Option<f64>,
    consts: ScheduleConstants,
) -> Result<MrpgSchedule> {
    build_schedule(ScheduleInputs::from_constants(constants, kind, j_gap_bound), epsilon, delta, consts)
}

/// Largest `c1` (and the largest matching `c2`) for which the value rows can
/// all hold at every `epsilon <= epsilon_max`, shrunk by `margin` in `(0, 1)`.
///
/// Writing the rows out in terms of `c1, c2` gives `c1 <= 1`,
/// `c1^2 <= c2 eta delta`, `c1 <= eta/(12 ell eps)`, `c2 eta <= c1/2` and
/// `c2 <= c1/(48 ell eps)`; the middle pair alone forces `c1 <= delta/2`.
pub fn feasible_constants(
    inputs: &ScheduleInputs,
    epsilon_max: f64,
    delta: f64,
    margin: f64,
) -> Result<ScheduleConstants> {
    check_inputs(inputs, epsilon_max, delta, &ScheduleConstants::default())?;
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::param(format!("margin must lie in (0, 1), got {margin}")));
    }
    let ScheduleInputs { ell, eta, .. } = *inputs;
    if eta == 0.0 {
        return Err(Error::Infeasible { reason: "CNC degenerate: eta = 0".into(), report: None });
    }
    let eps = epsilon_max;
    let c2_cap = |c1: f64| (c1 / (2.0 * eta)).min(c1 / (48.0 * ell * eps));
    let c1_max = [1.0, delta / 2.0, eta * delta / (48.0 * ell * eps), eta / (12.0 * ell * eps)]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let c1 = margin * c1_max;
    Ok(ScheduleConstants { c1, c2: c2_cap(c1), ..ScheduleConstants::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_of(err: Error) -> MrpgSchedule {
        match err {
            Error::Infeasible { report: Some(r), .. } => *r,
            other => panic!("expected an infeasible schedule with a report, got {other:?}"),
        }
    }

    #[test]
    fn beta_value_for_normalized_constants() {
        let err = build_schedule(ScheduleInputs::normalized(), 0.1, 0.1, ScheduleConstants::default()).unwrap_err();
        let s = report_of(err);
        assert!((s.beta - 0.005).abs() < 1e-15);
    }

    #[test]
    fn default_constants_are_infeasible() {
        // c1 = 1 and c2 = 1/2 cannot satisfy both beta rows at once for delta < 1.
        let err = build_schedule(ScheduleInputs::normalized(), 0.05, 0.5, ScheduleConstants::default()).unwrap_err();
        let s = report_of(err);
        assert!(!s.constraint_report[1].holds);
    }

    #[test]
    fn homogeneity_in_epsilon() {
        let c = ScheduleConstants::default();
        let a = report_of(build_schedule(ScheduleInputs::normalized(), 0.2, 0.1, c).unwrap_err());
        let b = report_of(build_schedule(ScheduleInputs::normalized(), 0.1, 0.1, c).unwrap_err());
        assert!((b.beta / a.beta - 0.25).abs() < 1e-14);
        assert!((b.j_thre / a.j_thre - 1.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn zero_eta_is_degenerate() {
        let mut i = ScheduleInputs::normalized();
        i.eta = 0.0;
        let err = build_schedule(i, 0.1, 0.1, ScheduleConstants::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { ref reason, report: None } if reason.contains("CNC degenerate")));
    }

    #[test]
    fn feasible_constants_pass_every_row() {
        let inputs = ScheduleInputs::normalized();
        let c = feasible_constants(&inputs, 0.2, 0.1, 0.99).unwrap();
        for eps in [0.2, 0.1, 0.05] {
            let s = build_schedule(inputs, eps, 0.1, c).unwrap();
            assert!(s.feasible());
            assert!(s.alpha < s.beta && s.k_thre >= 1 && s.big_k >= s.k_thre);
            let slack = s.k_thre as f64 - s.constraint_report[7].rhs;
            assert!((0.0..1.0 + 1e-6 * s.k_thre as f64).contains(&slack), "k_thre not minimal: {slack}");
        }
    }

    #[test]
    fn plan_caps_budget() {
        let inputs = ScheduleInputs::normalized();
        let c = feasible_constants(&inputs, 0.2, 0.1, 0.99).unwrap();
        let s = build_schedule(inputs, 0.2, 0.1, c).unwrap();
        let p = s.plan(Some(1000));
        assert_eq!(p.iterations, 1000);
        assert!(p.truncated);
        assert!(!s.plan(None).truncated);
    }
}
