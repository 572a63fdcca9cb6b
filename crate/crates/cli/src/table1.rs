//! The `table1` command: materialise the MRPG schedule from a constants file.

use crate::error::{CliError, CliResult};
use geopg::constants::{derive_constants, BaseConstants};
use geopg::estimators::GradientKind;
use geopg::optim::{build_schedule, feasible_constants, MrpgSchedule, ScheduleConstants, ScheduleInputs};
use serde::{Deserialize, Serialize};
use std::fmt::Write;

/// A constants file gives either the schedule inputs directly or the base
/// constants of a problem, and optionally the free schedule constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<ScheduleInputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseConstants>,
    /// Estimator whose `ell`, `eta` and `ell_g` are used with `base`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<GradientKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConstants>,
}

impl ConstantsFile {
    pub fn parse(doc: &str) -> CliResult<Self> {
        toml::from_str(doc).map_err(|e| CliError::usage(format!("invalid constants file: {e}")))
    }

    pub fn resolve_inputs(&self) -> CliResult<ScheduleInputs> {
        match (&self.inputs, &self.base) {
            (Some(i), None) => Ok(*i),
            (None, Some(b)) => {
                let pc = derive_constants(*b)?;
                Ok(ScheduleInputs::from_constants(&pc, self.kind.unwrap_or(GradientKind::AdvTd), self.j_gap))
            }
            _ => Err(CliError::usage("constants file needs exactly one of [inputs] or [base]")),
        }
    }
}

/// How the free constants are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantsChoice {
    /// From the file, or the defaults.
    File,
    /// Solved for feasibility at every `epsilon <= eps_max`.
    Solve { eps_max: f64 },
}

/// Outcome of `table1`: the schedule (possibly infeasible) or a degenerate problem.
#[derive(Debug, Clone)]
pub struct Table1Output {
    pub schedule: Option<MrpgSchedule>,
    pub error: Option<String>,
}

pub fn table1(file: &ConstantsFile, epsilon: f64, delta: f64, choice: ConstantsChoice) -> CliResult<Table1Output> {
    let inputs = file.resolve_inputs()?;
    let consts = match choice {
        ConstantsChoice::File => file.schedule.unwrap_or_default(),
        ConstantsChoice::Solve { eps_max } => match feasible_constants(&inputs, eps_max, delta, 0.5) {
            Ok(c) => c,
            Err(geopg::Error::Infeasible { reason, .. }) => {
                return Ok(Table1Output { schedule: None, error: Some(reason) })
            }
            Err(e) => return Err(e.into()),
        },
    };
    match build_schedule(inputs, epsilon, delta, consts) {
        Ok(s) => Ok(Table1Output { schedule: Some(s), error: None }),
        Err(geopg::Error::Infeasible { reason, report }) => {
            Ok(Table1Output { schedule: report.map(|b| *b), error: Some(reason) })
        }
        Err(e) => Err(e.into()),
    }
}

/// Human-readable schedule and constraint report.
pub fn render(out: &Table1Output) -> String {
    let mut s = String::new();
    if let Some(sch) = &out.schedule {
        writeln!(s, "epsilon  = {:e}\ndelta    = {:e}", sch.epsilon, sch.delta).unwrap();
        writeln!(s, "alpha    = {:e}\nbeta     = {:e}", sch.alpha, sch.beta).unwrap();
        writeln!(s, "k_thre   = {}\nJ_thre   = {:e}", sch.k_thre, sch.j_thre).unwrap();
        writeln!(s, "K        = {:e}\nlambda   = {:e}", sch.big_k_exact, sch.lambda).unwrap();
        let c = sch.constants;
        writeln!(s, "constants c1={:e} c2={:e} c4={} c5={} c'={}", c.c1, c.c2, c.c4, c.c5, c.c_prime).unwrap();
        writeln!(s, "constraints:").unwrap();
        for r in &sch.constraint_report {
            let mark = if r.holds { "ok  " } else { "FAIL" };
            writeln!(s, "  {mark} {:<60} {:>13.6e} {} {:.6e}", r.name, r.lhs, r.relation, r.rhs).unwrap();
        }
    }
    if let Some(e) = &out.error {
        writeln!(s, "infeasible: {e}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const NORMALIZED: &str = "[inputs]\nell = 1.0\nl = 1.0\neta = 1.0\nrho = 1.0\nell_g = 1.0\nj_gap = 1.0\n";

    #[test]
    fn normalized_beta_reported_even_when_infeasible() {
        let f = ConstantsFile::parse(NORMALIZED).unwrap();
        let out = table1(&f, 0.1, 0.1, ConstantsChoice::File).unwrap();
        let sch = out.schedule.as_ref().unwrap();
        assert!((sch.beta - 0.005).abs() < 1e-15);
        assert!(out.error.is_some());
        assert!(render(&out).contains("FAIL"));
    }

    #[test]
    fn solved_constants_are_feasible() {
        let f = ConstantsFile::parse(NORMALIZED).unwrap();
        let out = table1(&f, 0.1, 0.1, ConstantsChoice::Solve { eps_max: 0.1 }).unwrap();
        assert!(out.error.is_none(), "{:?}", out.error);
        assert!(out.schedule.unwrap().feasible());
    }

    #[test]
    fn zero_reward_floor_is_degenerate() {
        let doc = "kind = \"q_hat\"\n[base]\ngamma = 0.9\nu_r = 1.0\nl_r = 0.0\nb_theta = 1.0\nl_theta = 1.0\nrho_theta = 1.0\nl_i = 0.5\n";
        let f = ConstantsFile::parse(doc).unwrap();
        let out = table1(&f, 0.1, 0.1, ConstantsChoice::File).unwrap();
        assert!(out.schedule.is_none());
        assert!(out.error.unwrap().contains("CNC degenerate"));
    }

    #[test]
    fn both_sections_is_usage_error() {
        let doc = format!("{NORMALIZED}[base]\ngamma = 0.9\nu_r = 1.0\nl_r = 0.5\nb_theta = 1.0\nl_theta = 1.0\nrho_theta = 1.0\nl_i = 0.5\n");
        let f = ConstantsFile::parse(&doc).unwrap();
        assert_eq!(f.resolve_inputs().unwrap_err().exit_code(), 2);
    }
}
