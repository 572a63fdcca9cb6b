//! Closed-form problem constants: smoothness of `J`, almost-sure bounds of the
//! gradient estimates and correlated-negative-curvature floors.

use crate::error::{Error, Result};
use crate::estimators::GradientKind;
use crate::mdp::RewardBounds;
use crate::policy::ScoreBounds;
use serde::{Deserialize, Serialize};

/// Primitive constants of an MDP/policy pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseConstants {
    pub gamma: f64,
    /// `sup |R|`.
    pub u_r: f64,
    /// `inf |R|` for strictly signed rewards, else 0.
    pub l_r: f64,
    pub b_theta: f64,
    pub l_theta: f64,
    pub rho_theta: f64,
    /// Fisher lower bound.
    pub l_i: f64,
}

impl BaseConstants {
    pub fn from_bounds(gamma: f64, rewards: RewardBounds, score: ScoreBounds, l_i: f64) -> Self {
        BaseConstants {
            gamma,
            u_r: rewards.upper_abs(),
            l_r: rewards.lower_abs(),
            b_theta: score.b_theta,
            l_theta: score.l_theta,
            rho_theta: score.rho_theta,
            l_i,
        }
    }
}

/// Base constants plus everything derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub base: BaseConstants,
    /// Lipschitz constant of `grad J`.
    pub l: f64,
    /// Lipschitz constant of the Hessian of `J`.
    pub rho: f64,
    pub l_hat: f64,
    pub l_check: f64,
    pub l_tilde: f64,
    pub eta_hat: f64,
    pub eta_check: f64,
    pub eta_tilde: f64,
}

pub fn derive_constants(base: BaseConstants) -> Result<ProblemConstants> {
    let BaseConstants { gamma: g, u_r, l_r, b_theta: b, l_theta: lt, rho_theta: rt, l_i } = base;
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::param(format!("gamma must lie in (0, 1), got {g}")));
    }
    for (name, v) in [("U_R", u_r), ("L_R", l_r), ("B_theta", b), ("L_theta", lt), ("rho_theta", rt), ("L_I", l_i)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::param(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    if l_r > u_r {
        return Err(Error::param(format!("L_R = {l_r} exceeds U_R = {u_r}")));
    }
    let sg = g.sqrt();
    let om = 1.0 - g;
    let l = u_r * lt / om.powi(2) + (1.0 + g) * u_r * b * b / om.powi(3);
    let l_hat = b * u_r / (om * (1.0 - sg));
    let l_tilde = (2.0 + g - sg) * b * u_r / (om * (1.0 - sg));
    let eta_hat = l_r * l_r * l_i;
    let eta_check = 2.0 * l_r * l_r * g.powi(3) * (1.0 - sg) / ((1.0 - g.powf(1.5)) * om * om) * l_i;
    let eta_tilde = (1.0 + g * g) * l_r * l_r * g.powi(3) * (1.0 - sg) / ((1.0 - g.powf(1.5)) * om * om) * l_i;
    // rho_theta / B_theta with the B_theta = 0 case taken as the limit of the
    // product U_R B_theta / (1-gamma) * rho_theta / B_theta.
    let lead = u_r * b / om;
    let candidates = [lt, b * b * g / om, lt * g / om, (b * b * (1.0 + g) + lt * om * g) / om.powi(2)];
    let max_rest = candidates.into_iter().fold(0.0, f64::max);
    let tail = if b > 0.0 { lead * max_rest.max(rt / b) } else { u_r * rt / om };
    let rho = u_r * b * lt / om.powi(2) + u_r * b.powi(3) * (1.0 + g) / om.powi(3) + tail;
    Ok(ProblemConstants { base, l, rho, l_hat, l_check: 2.0 * l_hat, l_tilde, eta_hat, eta_check, eta_tilde })
}

impl ProblemConstants {
    pub fn gamma(&self) -> f64 {
        self.base.gamma
    }

    /// Almost-sure bound on `||g||` for the given estimator.
    pub fn ell(&self, kind: GradientKind) -> f64 {
        match kind {
            GradientKind::QHat => self.l_hat,
            GradientKind::AdvDiff => self.l_check,
            GradientKind::AdvTd => self.l_tilde,
        }
    }

    /// Correlated-negative-curvature floor for the given estimator.
    pub fn eta(&self, kind: GradientKind) -> f64 {
        match kind {
            GradientKind::QHat => self.eta_hat,
            GradientKind::AdvDiff => self.eta_check,
            GradientKind::AdvTd => self.eta_tilde,
        }
    }

    /// `l_g` with `l_g^2 = 2 ell^2 + 2 B^2 U_R^2 / (1-gamma)^4`.
    pub fn ell_g(&self, kind: GradientKind) -> f64 {
        let ell = self.ell(kind);
        let b = &self.base;
        (2.0 * ell * ell + 2.0 * (b.b_theta * b.u_r).powi(2) / (1.0 - b.gamma).powi(4)).sqrt()
    }

    /// `|Q_hat| <= U_R / (1 - sqrt(gamma))`.
    pub fn q_hat_bound(&self) -> f64 {
        self.base.u_r / (1.0 - self.base.gamma.sqrt())
    }

    /// `||grad J|| <= B_theta U_R / (1-gamma)^2`.
    pub fn grad_j_bound(&self) -> f64 {
        self.base.b_theta * self.base.u_r / (1.0 - self.base.gamma).powi(2)
    }

    /// `||grad Q(s, a)|| <= U_R B_theta gamma / (1-gamma)^2`.
    pub fn grad_q_bound(&self) -> f64 {
        self.base.u_r * self.base.b_theta * self.base.gamma / (1.0 - self.base.gamma).powi(2)
    }

    /// Expected environment steps per gradient estimate:
    /// `1/(1-gamma) + 1/(1-sqrt(gamma))`.
    pub fn expected_samples_per_step(&self) -> f64 {
        1.0 / (1.0 - self.base.gamma) + 1.0 / (1.0 - self.base.gamma.sqrt())
    }
}
