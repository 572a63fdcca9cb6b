//! Grid runs over reward offsets and step sizes.

use crate::config::{EnvSpec, OptimizerSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{mean_std, write_artifacts};
use crate::runner::{execute, RunResult};
use geopg::optim::StepsizeSchedule;
use std::path::Path;

/// The grid: every offset paired with every step size.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub offsets: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// One cell of the grid: `base` with the reward shifted by `offset` and the
/// (first) step size replaced by `alpha`.
pub fn cell(base: &RunConfig, offset: f64, alpha: f64) -> CliResult<RunConfig> {
    let mut c = base.clone();
    c.name = format!("{}-offset{offset}-alpha{alpha}", base.name);
    c.environment = match &base.environment {
        EnvSpec::Tabular { fixture, path, reward_offset } => {
            EnvSpec::Tabular { fixture: fixture.clone(), path: path.clone(), reward_offset: reward_offset + offset }
        }
        EnvSpec::Pendulum(env) => EnvSpec::Pendulum(env.reshaped(offset)),
    };
    c.optimizer = match &base.optimizer {
        OptimizerSpec::Rpg { schedule: StepsizeSchedule::Constant { .. } } => {
            OptimizerSpec::Rpg { schedule: StepsizeSchedule::Constant { alpha } }
        }
        OptimizerSpec::Mrpg { plan: Some(p), target: None } => {
            let mut p = *p;
            p.alpha = alpha;
            OptimizerSpec::Mrpg { plan: Some(p), target: None }
        }
        _ => return Err(CliError::usage("sweeps need a constant-step RPG or an explicit MRPG plan")),
    };
    c.validate()?;
    Ok(c)
}

/// Mean final exact `J` on tabular problems, else the mean last return estimate.
fn score(r: &RunResult) -> Option<f64> {
    let finals: Option<Vec<f64>> = r
        .seeds
        .iter()
        .map(|s| s.final_j.or_else(|| s.output.records.iter().rev().find_map(|rec| rec.return_estimate)))
        .collect();
    finals.filter(|v| !v.is_empty()).map(|v| mean_std(&v).0)
}

/// Runs every cell, writes its artefacts under `out`, and returns the
/// `sweep.csv` text.
pub fn sweep(base: &RunConfig, grid: &SweepGrid, out: &Path) -> CliResult<String> {
    if grid.offsets.is_empty() || grid.alphas.is_empty() {
        return Err(CliError::usage("sweep needs at least one offset and one step size"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "offset", "alpha", "config_hash", "mean_final"]).map_err(CliError::runtime)?;
    for &offset in &grid.offsets {
        for &alpha in &grid.alphas {
            let c = cell(base, offset, alpha)?;
            let r = execute(&c)?;
            write_artifacts(&r, out)?;
            let s = score(&r).map(|v| format!("{v:e}")).unwrap_or_default();
            w.write_record([c.name.clone(), offset.to_string(), alpha.to_string(), c.hash(), s])
                .map_err(CliError::runtime)?;
        }
    }
    let text = String::from_utf8(w.into_inner().map_err(CliError::runtime)?).map_err(CliError::runtime)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sweep.csv"), &text)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn cell_shifts_offset_and_step() {
        let base = preset("chain2-rpg-rates").unwrap().swap_remove(1);
        let c = cell(&base, 2.0, 0.02).unwrap();
        assert!(matches!(c.environment, EnvSpec::Tabular { reward_offset, .. } if reward_offset == 2.0));
        assert!(
            matches!(c.optimizer, OptimizerSpec::Rpg { schedule: StepsizeSchedule::Constant { alpha } } if alpha == 0.02)
        );
        assert_ne!(c.hash(), base.hash());
    }

    #[test]
    fn diminishing_schedule_cannot_be_swept() {
        let base = preset("chain2-rpg-rates").unwrap().swap_remove(0);
        assert_eq!(cell(&base, 0.0, 0.1).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn small_sweep_writes_csv() {
        let mut base = preset("chain2-rpg-rates").unwrap().swap_remove(1);
        base.iterations = 20;
        base.seeds = vec![0, 1];
        let dir = tempfile::tempdir().unwrap();
        let grid = SweepGrid { offsets: vec![0.0, 1.0], alphas: vec![0.01] };
        let text = sweep(&base, &grid, dir.path()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(dir.path().join("sweep.csv").exists());
    }
}
