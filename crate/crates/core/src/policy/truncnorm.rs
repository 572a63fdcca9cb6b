//! Standard normal truncated to `[alpha, beta]`: normaliser, hazard ratios and
//! sampling, stable far into either tail.

use rand::Rng;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn ln_std_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

fn std_cdf_inv(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `Phi(x) / phi(x)` for `x <= 0`.
fn mills_lower(x: f64) -> f64 {
    if x > -30.0 {
        std_cdf(x) / std_pdf(x)
    } else {
        let t = -x;
        let t2 = 1.0 / (t * t);
        (1.0 - t2 * (1.0 - 3.0 * t2 * (1.0 - 5.0 * t2 * (1.0 - 7.0 * t2 * (1.0 - 9.0 * t2))))) / t
    }
}

/// Quantities of the truncated standard normal on `[alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncStdNormal {
    pub alpha: f64,
    pub beta: f64,
    /// `ln Z` with `Z = Phi(beta) - Phi(alpha)`.
    pub ln_z: f64,
    /// `phi(alpha) / Z`.
    pub hazard_lo: f64,
    /// `phi(beta) / Z`.
    pub hazard_hi: f64,
}

impl TruncStdNormal {
    pub fn new(alpha: f64, beta: f64) -> Self {
        debug_assert!(alpha < beta);
        if alpha >= 0.0 {
            let r = Self::lower_or_straddle(-beta, -alpha);
            return TruncStdNormal { alpha, beta, ln_z: r.ln_z, hazard_lo: r.hazard_hi, hazard_hi: r.hazard_lo };
        }
        Self::lower_or_straddle(alpha, beta)
    }

    fn lower_or_straddle(alpha: f64, beta: f64) -> Self {
        if beta <= 0.0 {
            // Both ends in the lower tail: factor out phi(beta).
            let decay = if alpha == f64::NEG_INFINITY { 0.0 } else { (0.5 * (beta * beta - alpha * alpha)).exp() };
            let tail_alpha = if decay == 0.0 { 0.0 } else { decay * mills_lower(alpha) };
            let scaled = mills_lower(beta) - tail_alpha;
            let hazard_hi = 1.0 / scaled;
            TruncStdNormal {
                alpha,
                beta,
                ln_z: ln_std_pdf(beta) + scaled.ln(),
                hazard_lo: decay * hazard_hi,
                hazard_hi,
            }
        } else {
            let z = 1.0 - std_cdf(alpha) - std_cdf(-beta);
            TruncStdNormal { alpha, beta, ln_z: z.ln(), hazard_lo: std_pdf(alpha) / z, hazard_hi: std_pdf(beta) / z }
        }
    }

    /// `d ln Z / d mu` times `sigma`, where `alpha = (lo - mu)/sigma` and
    /// `beta = (hi - mu)/sigma`: equals `hazard_lo - hazard_hi`.
    pub fn dlnz(&self) -> f64 {
        self.hazard_lo - self.hazard_hi
    }

    /// `d^2 ln Z / d mu^2` times `sigma^2`.
    pub fn d2lnz(&self) -> f64 {
        let a_term = if self.alpha.is_finite() { self.alpha * self.hazard_lo } else { 0.0 };
        let b_term = if self.beta.is_finite() { self.beta * self.hazard_hi } else { 0.0 };
        a_term - b_term - self.dlnz().powi(2)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = if self.alpha >= 0.0 {
            -sample_lower_side(-self.beta, -self.alpha, rng)
        } else {
            sample_lower_side(self.alpha, self.beta, rng)
        };
        x.clamp(self.alpha, self.beta)
    }
}

/// Samples on `[alpha, beta]` with `alpha < 0`.
fn sample_lower_side<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    if beta < -8.0 {
        return -sample_far_tail(-beta, -alpha, rng);
    }
    let lo = std_cdf(alpha);
    let hi = std_cdf(beta);
    let u: f64 = rng.random();
    std_cdf_inv(lo + u * (hi - lo))
}

/// Samples the standard normal restricted to `[a, b]` with `a` far in the
/// upper tail, by exponential (or uniform, for narrow intervals) rejection.
fn sample_far_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if (b - a) * a < 1.0 {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - (1.0 - rng.random::<f64>()).ln() / rate;
        if z <= b && rng.random::<f64>() <= (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn normaliser_matches_direct_evaluation() {
        for (a, b) in [(-1.0, 2.0), (-3.0, -0.5), (0.5, 4.0), (-20.0, 20.0), (-2.0, 0.0)] {
            let t = TruncStdNormal::new(a, b);
            let z = std_cdf(b) - std_cdf(a);
            assert!((t.ln_z - z.ln()).abs() < 1e-10, "({a},{b})");
            assert!((t.hazard_lo - std_pdf(a) / z).abs() < 1e-9);
            assert!((t.hazard_hi - std_pdf(b) / z).abs() < 1e-9);
        }
    }

    #[test]
    fn far_tail_is_finite_and_continuous() {
        let t1 = TruncStdNormal::new(-70.0, -29.999);
        let t2 = TruncStdNormal::new(-70.0, -30.001);
        assert!(t1.ln_z.is_finite() && t2.ln_z.is_finite());
        assert!((t1.hazard_hi - t2.hazard_hi).abs() < 1e-2);
        // Hazard at the near end approaches |beta| deep in the tail.
        assert!((t1.hazard_hi - 30.0).abs() < 0.1);
        let up = TruncStdNormal::new(40.0, 80.0);
        assert!((up.hazard_lo - 40.0).abs() < 0.1 && up.hazard_hi == 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // ln Z(mu) with sigma = 1, interval [lo, hi].
        let (lo, hi) = (-2.0, 1.5);
        let ln_z = |mu: f64| TruncStdNormal::new(lo - mu, hi - mu).ln_z;
        for mu in [-5.0, -1.0, 0.0, 0.7, 3.0, 12.0] {
            let t = TruncStdNormal::new(lo - mu, hi - mu);
            let h = 1e-5;
            let d1 = (ln_z(mu + h) - ln_z(mu - h)) / (2.0 * h);
            assert!((t.dlnz() - d1).abs() < 1e-6 * (1.0 + d1.abs()), "mu={mu}: {} vs {d1}", t.dlnz());
            let h = 1e-3;
            let d2 = (ln_z(mu + h) - 2.0 * ln_z(mu) + ln_z(mu - h)) / (h * h);
            assert!((t.d2lnz() - d2).abs() < 1e-4 * (1.0 + d2.abs()), "mu={mu}: {} vs {d2}", t.d2lnz());
        }
    }

    #[test]
    fn samples_stay_in_range_with_correct_mean() {
        let mut rng = seeded(3);
        for (a, b) in [(-1.0, 1.0), (2.0, 3.0), (-40.0, -20.0), (15.0, 55.0), (-3.0, 50.0)] {
            let t = TruncStdNormal::new(a, b);
            let n = 20_000;
            let mut sum = 0.0;
            for _ in 0..n {
                let x = t.sample(&mut rng);
                assert!(x >= a && x <= b);
                sum += x;
            }
            // E[X] = (phi(a) - phi(b)) / Z.
            let mean = t.hazard_lo - t.hazard_hi;
            assert!((sum / n as f64 - mean).abs() < 0.03, "({a},{b})");
        }
    }
}
