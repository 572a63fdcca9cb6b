//! Ascent loops and their step-size schedules.

mod run;
mod schedule;
mod stepsize;

pub use run::{
    mrpg_run, rpg_run, theta_hash, LogLevel, Monitor, NoMonitor, Observation, RolloutReturnMonitor, RunOptions,
    RunOutput, RunRecord, TabularMonitor,
};
pub use schedule::{
    build_mrpg_schedule, build_schedule, feasible_constants, ConstraintRow, MrpgPlan, MrpgSchedule, ScheduleConstants,
    ScheduleInputs,
};
pub use stepsize::StepsizeSchedule;
