//! Run configuration: everything that determines the output of `run`.

use crate::error::{CliError, CliResult};
use geopg::estimators::GradientKind;
use geopg::fixtures;
use geopg::mdp::{PendulumEnv, TabularMdp};
use geopg::optim::{LogLevel, ScheduleConstants, StepsizeSchedule};
use geopg::policy::ScoreMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Budget cap applied when a config does not set one.
pub const DEFAULT_MAX_ITERS: u64 = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub environment: EnvSpec,
    pub policy: PolicySpec,
    pub kind: GradientKind,
    pub optimizer: OptimizerSpec,
    /// Requested iterations; MRPG target mode may ask for more, capped by `max_iters`.
    pub iterations: u64,
    /// Gradient estimates averaged per step.
    #[serde(default = "one")]
    pub batch: u64,
    #[serde(default = "default_max_iters")]
    pub max_iters: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub monitor: MonitorSpec,
    #[serde(default)]
    pub log: LogLevel,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn one() -> u64 {
    1
}

fn default_max_iters() -> u64 {
    DEFAULT_MAX_ITERS
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    /// A bundled fixture (`chain2`, `ring3`, `chain2_saddle`) or a TOML file.
    Tabular {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixture: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        /// Added to every reward.
        #[serde(default)]
        reward_offset: f64,
    },
    Pendulum(PendulumEnv),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    TabularSoftmax,
    /// `features[s][a]` is the feature vector of `(s, a)`.
    LinearSoftmax {
        features: Vec<Vec<Vec<f64>>>,
    },
    TruncGaussMlp {
        #[serde(default = "default_hidden")]
        hidden: [usize; 2],
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        score_mode: ScoreMode,
    },
    TruncGaussLinear {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        score_mode: ScoreMode,
    },
}

fn default_hidden() -> [usize; 2] {
    [10, 10]
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Rpg {
        schedule: StepsizeSchedule,
    },
    /// Either an explicit plan or accuracy targets from which the schedule is built.
    Mrpg {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plan: Option<ExplicitPlan>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<MrpgTarget>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitPlan {
    pub alpha: f64,
    pub beta: f64,
    pub k_thre: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrpgTarget {
    pub epsilon: f64,
    pub delta: f64,
    /// Schedule constants; solved for feasibility when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ScheduleConstants>,
    /// Bound on `J* - J(theta_0)`; `2 U_R / (1 - gamma)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Zeros,
    /// The policy's own seeded initialiser, keyed by the run seed.
    Policy,
    Values {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSpec {
    /// Observe every this many iterations.
    pub every: u64,
    /// Rollouts per return estimate (non-tabular environments).
    pub episodes: u64,
    /// Truncation of those rollouts.
    pub horizon: u64,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        MonitorSpec { every: 1, episodes: 10, horizon: 200 }
    }
}

impl RunConfig {
    pub fn from_toml_str(doc: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(doc).map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let doc = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&doc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configs always serialise")
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name must be a non-empty file name, got {:?}", self.name));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.iterations == 0 || self.max_iters == 0 || self.batch == 0 || self.monitor.every == 0 {
            return bad("iterations, max_iters, batch and monitor.every must be positive".into());
        }
        match &self.environment {
            EnvSpec::Tabular { fixture, path, reward_offset } => {
                if fixture.is_some() == path.is_some() {
                    return bad("a tabular environment needs exactly one of `fixture` or `path`".into());
                }
                if !reward_offset.is_finite() {
                    return bad("reward_offset must be finite".into());
                }
                if matches!(self.policy, PolicySpec::TruncGaussMlp { .. } | PolicySpec::TruncGaussLinear { .. }) {
                    return bad("truncated-Gaussian policies need the pendulum environment".into());
                }
            }
            EnvSpec::Pendulum(env) => {
                env.validate().map_err(CliError::from)?;
                if matches!(self.policy, PolicySpec::TabularSoftmax | PolicySpec::LinearSoftmax { .. }) {
                    return bad("softmax policies need a tabular environment".into());
                }
                if self.monitor.episodes == 0 || self.monitor.horizon == 0 {
                    return bad("monitor.episodes and monitor.horizon must be positive".into());
                }
            }
        }
        match &self.optimizer {
            OptimizerSpec::Rpg { schedule } => schedule.validate().map_err(CliError::from)?,
            OptimizerSpec::Mrpg { plan, target } => match (plan, target) {
                (Some(p), None) => {
                    if !(p.alpha > 0.0 && p.beta > 0.0 && p.k_thre > 0) {
                        return bad("MRPG plan needs positive alpha, beta and k_thre".into());
                    }
                }
                (None, Some(t)) => {
                    if !(t.epsilon > 0.0 && t.epsilon < 1.0 && t.delta > 0.0 && t.delta < 1.0) {
                        return bad("MRPG targets epsilon and delta must lie in (0, 1)".into());
                    }
                }
                _ => return bad("MRPG needs exactly one of `plan` or `target`".into()),
            },
        }
        Ok(())
    }

    /// Loads the tabular environment, with the reward offset applied.
    pub fn tabular_mdp(&self) -> CliResult<Option<TabularMdp>> {
        let EnvSpec::Tabular { fixture, path, reward_offset } = &self.environment else {
            return Ok(None);
        };
        let mdp = match (fixture.as_deref(), path) {
            (Some(name), _) => named_fixture(name)?,
            (None, Some(p)) => {
                TabularMdp::load(p).map_err(|e| CliError::usage(format!("cannot load MDP {}: {e}", p.display())))?
            }
            (None, None) => return Err(CliError::usage("tabular environment without fixture or path")),
        };
        Ok(Some(if *reward_offset == 0.0 { mdp } else { mdp.reshaped(*reward_offset) }))
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("run configs always serialise");
        if let Some(map) = v.as_object_mut() {
            map.remove("out_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Iterations actually run for the RPG loop and for explicit MRPG plans.
    pub fn capped_iterations(&self) -> u64 {
        self.iterations.min(self.max_iters)
    }
}

pub fn named_fixture(name: &str) -> CliResult<TabularMdp> {
    match name {
        "chain2" => Ok(fixtures::chain2()),
        "ring3" => Ok(fixtures::ring3()),
        "chain2_saddle" => Ok(fixtures::chain2_saddle()),
        other => Err(CliError::usage(format!("unknown fixture {other:?}; known: chain2, ring3, chain2_saddle"))),
    }
}

/// Parses `N..M` (exclusive) or a single `N`.
pub fn parse_seed_range(s: &str) -> CliResult<Vec<u64>> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| CliError::usage(format!("bad seed {t:?} in {s:?}")));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if b <= a {
                return Err(CliError::usage(format!("empty seed range {s:?}")));
            }
            Ok((a..b).collect())
        }
        None => Ok(vec![num(s)?]),
    }
}

/// Shifts the seed list so that it starts at `base`, keeping its length.
pub fn rebase_seeds(seeds: &[u64], base: u64) -> Vec<u64> {
    let lo = seeds.iter().copied().min().unwrap_or(0);
    seeds.iter().map(|s| base + (s - lo)).collect()
}
