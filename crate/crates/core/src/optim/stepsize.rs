use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Step-size rule of the plain ascent loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepsizeSchedule {
    /// `alpha_k = k^{-a}` for `k >= 1`, `alpha_0 = 1`.
    Diminishing {
        a: f64,
    },
    Constant {
        alpha: f64,
    },
}

impl StepsizeSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepsizeSchedule::Diminishing { a } if !(a > 0.0 && a < 1.0) => {
                Err(Error::param(format!("diminishing exponent must lie in (0, 1), got {a}")))
            }
            StepsizeSchedule::Constant { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                Err(Error::param(format!("constant step must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn at(&self, k: u64) -> f64 {
        match *self {
            StepsizeSchedule::Diminishing { a } => {
                if k == 0 {
                    1.0
                } else {
                    (k as f64).powf(-a)
                }
            }
            StepsizeSchedule::Constant { alpha } => alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diminishing_values() {
        let s = StepsizeSchedule::Diminishing { a: 0.5 };
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(1), 1.0);
        assert_eq!(s.at(4), 0.5);
        assert!(StepsizeSchedule::Diminishing { a: 1.0 }.validate().is_err());
        assert!(StepsizeSchedule::Constant { alpha: 0.0 }.validate().is_err());
        assert_eq!(StepsizeSchedule::Constant { alpha: 0.3 }.at(17), 0.3);
    }
}
