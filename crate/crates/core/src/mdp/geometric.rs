use crate::error::{Error, Result};
use rand::Rng;

/// Draws `T` with `P(T = t) = p (1-p)^t` on `{0, 1, 2, ...}` by inverting the
/// CDF of a single uniform.
pub fn sample_geometric<R: Rng + ?Sized>(success_prob: f64, rng: &mut R) -> Result<u64> {
    if !(success_prob > 0.0 && success_prob <= 1.0) {
        return Err(Error::param(format!("geometric success probability must lie in (0, 1], got {success_prob}")));
    }
    // 1 - U is uniform on (0, 1], so the log is finite.
    let u = 1.0 - rng.random::<f64>();
    if success_prob == 1.0 {
        return Ok(0);
    }
    let t = (u.ln() / (-success_prob).ln_1p()).floor();
    Ok(if t >= u64::MAX as f64 { u64::MAX } else { t as u64 })
}
