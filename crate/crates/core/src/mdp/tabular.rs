use super::{Environment, RewardBounds};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Tolerance applied when loading transition rows from a document.
const LOAD_ROW_TOL: f64 = 1e-9;
/// Tolerance applied to programmatically built rows.
const BUILD_ROW_TOL: f64 = 1e-12;

/// On-disk form of a tabular MDP.
///
/// `transition` is row-major over `(s, a, s')`, `reward` over `(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub start_state: usize,
}

/// Finite MDP with a dense transition tensor and a single start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabularSpec", into = "TabularSpec")]
pub struct TabularMdp {
    name: Option<String>,
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    start_state: usize,
}

impl TryFrom<TabularSpec> for TabularMdp {
    type Error = Error;

    fn try_from(spec: TabularSpec) -> Result<Self> {
        Self::validated(spec, LOAD_ROW_TOL)
    }
}

impl From<TabularMdp> for TabularSpec {
    fn from(m: TabularMdp) -> Self {
        TabularSpec {
            name: m.name,
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition: m.transition,
            reward: m.reward,
            gamma: m.gamma,
            start_state: m.start_state,
        }
    }
}

impl TabularMdp {
    /// Builds an MDP, requiring every row of `P` to sum to one within 1e-12.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        start_state: usize,
    ) -> Result<Self> {
        Self::validated(
            TabularSpec { name: None, n_states, n_actions, transition, reward, gamma, start_state },
            BUILD_ROW_TOL,
        )
    }

    fn validated(spec: TabularSpec, row_tol: f64) -> Result<Self> {
        let TabularSpec { name, n_states, n_actions, transition, reward, gamma, start_state } = spec;
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("n_states and n_actions must be positive".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Config(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::Config(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if start_state >= n_states {
            return Err(Error::Config(format!("start_state {start_state} out of range")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::Config(format!("non-finite reward {r}")));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Config(format!(
                    "transition row (s={}, a={}) has a negative or non-finite entry",
                    row_idx / n_actions,
                    row_idx % n_actions
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > row_tol {
                return Err(Error::Config(format!(
                    "transition row (s={}, a={}) sums to {sum}",
                    row_idx / n_actions,
                    row_idx % n_actions
                )));
            }
        }
        Ok(TabularMdp { name, n_states, n_actions, transition, reward, gamma, start_state })
    }

    pub fn from_toml_str(doc: &str) -> Result<Self> {
        let spec: TabularSpec = toml::from_str(doc).map_err(|e| Error::Config(format!("tabular MDP: {e}")))?;
        Self::try_from(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&doc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&TabularSpec::from(self.clone())).expect("tabular spec serializes")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn start(&self) -> usize {
        self.start_state
    }

    /// `P(s' | s, a)`.
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Same MDP with `R'(s, a) = R(s, a) + offset`.
    pub fn reshaped(&self, offset: f64) -> Self {
        let mut out = self.clone();
        if offset != 0.0 {
            out.reward.iter_mut().for_each(|r| *r += offset);
        }
        out
    }

    /// Same MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::param(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    fn check_sa(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::param(format!(
                "(s={s}, a={a}) out of range for {}x{} MDP",
                self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

impl Environment for TabularMdp {
    type State = usize;
    type Action = usize;

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn start_state<R: Rng + ?Sized>(&self, _rng: &mut R) -> Result<usize> {
        Ok(self.start_state)
    }

    fn reward(&self, s: &usize, a: &usize) -> Result<f64> {
        self.check_sa(*s, *a)?;
        Ok(self.r(*s, *a))
    }

    fn transition<R: Rng + ?Sized>(&self, s: &usize, a: &usize, rng: &mut R) -> Result<usize> {
        self.check_sa(*s, *a)?;
        let row = self.row(*s, *a);
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (next, p) in row.iter().enumerate() {
            if *p > 0.0 {
                last_positive = next;
                acc += p;
                if u < acc {
                    return Ok(next);
                }
            }
        }
        // Rounding left u above the accumulated mass.
        Ok(last_positive)
    }

    fn reward_bounds(&self) -> RewardBounds {
        let min = self.reward.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.reward.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        RewardBounds { min, max }
    }
}
