//! Argument parsing and command dispatch.

use crate::config::{parse_seed_range, rebase_seeds, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::write_artifacts;
use crate::plot::{parse_aggregate, render_svg};
use crate::presets::preset;
use crate::runner::execute;
use crate::sweep::{sweep, SweepGrid};
use crate::table1::{render, table1, ConstantsChoice, ConstantsFile};
use crate::verify::{self, Suite, VerifyOptions};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Environment variable that rebases the seed list of a config.
pub const SEED_ENV: &str = "GEOPG_SEED";

#[derive(Debug, Parser)]
#[command(name = "geopg", version, about = "Random-horizon policy gradient experiments")]
pub struct Cli {
    /// Worker threads for seeds and sample batches (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run RPG or MRPG as configured and write logs, aggregates and plots.
    Run(RunArgs),
    /// Run the verification batteries.
    Verify(VerifyArgs),
    /// Build the MRPG step-size schedule from a constants file.
    Table1(Table1Args),
    /// Run a config over a grid of reward offsets and step sizes.
    Sweep(SweepArgs),
    /// Re-render a plot from an aggregate CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Source {
    /// Path of a TOML run config.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// A named preset instead of a config file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Run this single seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Run seeds `N..M` (end exclusive).
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output root; defaults to the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap on iterations per run.
    #[arg(long)]
    pub max_iters: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    /// Run only these criteria (comma separated ids).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u32>,
    /// Write the reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Test hook: bias every policy-gradient estimate.
    #[arg(long, hide = true)]
    pub inject_bias: bool,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    /// TOML file with `[inputs]` or `[base]`, optionally `[schedule]`.
    #[arg(long)]
    pub constants: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    /// Solve for feasible free constants at this largest epsilon.
    #[arg(long)]
    pub solve: Option<f64>,
    /// Write the schedule as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: Source,
    /// Reward offsets (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub offsets: Vec<f64>,
    /// Step sizes (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Aggregate CSV written by `run`.
    #[arg(long)]
    pub csv: PathBuf,
    /// SVG path; defaults to the CSV path with an `.svg` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Configs named by `source`, with seed, budget and output overrides applied.
/// Seed precedence: `--seed`/`--seeds`, then `GEOPG_SEED`, then the config.
pub fn load_configs(source: &Source, env_seed: Option<&str>) -> CliResult<Vec<RunConfig>> {
    let mut configs = match (&source.config, &source.preset) {
        (Some(path), None) => vec![RunConfig::load(path)?],
        (None, Some(name)) => preset(name)?,
        _ => return Err(CliError::usage("give exactly one of --config and --preset")),
    };
    let flag_seeds = match (source.seed, &source.seeds) {
        (Some(s), _) => Some(vec![s]),
        (None, Some(r)) => Some(parse_seed_range(r)?),
        (None, None) => None,
    };
    let env_base = env_seed
        .map(|v| v.trim().parse::<u64>().map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not a seed"))))
        .transpose()?;
    for c in &mut configs {
        if let Some(s) = &flag_seeds {
            c.seeds = s.clone();
        } else if let Some(base) = env_base {
            c.seeds = rebase_seeds(&c.seeds, base);
        }
        if let Some(m) = source.max_iters {
            c.max_iters = m;
        }
        if let Some(out) = &source.out {
            c.out_dir = out.clone();
        }
        c.validate()?;
    }
    Ok(configs)
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::usage("--threads must be positive"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    Ok(())
}

fn write_plot(csv: &Path, svg: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(csv).map_err(|e| CliError::usage(format!("{}: {e}", csv.display())))?;
    std::fs::write(svg, render_svg(&parse_aggregate(&text)?)?)?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> CliResult<()> {
    for config in load_configs(&args.source, std::env::var(SEED_ENV).ok().as_deref())? {
        let result = execute(&config)?;
        let art = write_artifacts(&result, &config.out_dir)?;
        write_plot(&art.aggregate, &art.dir.join("curves.svg"))?;
        let finals: Vec<String> = result
            .seeds
            .iter()
            .filter_map(|s| s.final_j.or_else(|| s.output.records.iter().rev().find_map(|r| r.return_estimate)))
            .map(|v| format!("{v:.4}"))
            .collect();
        println!(
            "{}: {} seeds, {} iterations, config {} -> {}",
            config.name,
            result.seeds.len(),
            result.plan.iterations(),
            config.hash(),
            art.dir.display()
        );
        if !finals.is_empty() {
            println!("  final: {}", finals.join(" "));
        }
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> CliResult<()> {
    let opts = VerifyOptions { suite: args.suite, inject_bias: args.inject_bias };
    let ids = if args.only.is_empty() { verify::suite_ids(args.suite) } else { args.only.clone() };
    let mut results = Vec::new();
    for id in ids {
        let r = verify::run_criterion(id, &opts)?;
        print!("{}", verify::render(std::slice::from_ref(&r)));
        results.push(r);
    }
    if let Some(path) = &args.json {
        let reports: Vec<_> = results
            .iter()
            .flat_map(|r| r.checks.iter().map(move |c| serde_json::json!({ "criterion": r.id, "control": c.control, "ok": c.ok(), "report": c.report })))
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&reports).map_err(CliError::runtime)? + "\n")?;
    }
    let failed = results.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed { failed, total: results.len() });
    }
    Ok(())
}

fn cmd_table1(args: &Table1Args) -> CliResult<()> {
    let doc = std::fs::read_to_string(&args.constants)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.constants.display())))?;
    let file = ConstantsFile::parse(&doc)?;
    let choice = args.solve.map_or(ConstantsChoice::File, |eps_max| ConstantsChoice::Solve { eps_max });
    let out = table1(&file, args.epsilon, args.delta, choice)?;
    print!("{}", render(&out));
    if let (Some(path), Some(sch)) = (&args.json, &out.schedule) {
        std::fs::write(path, serde_json::to_string_pretty(sch).map_err(CliError::runtime)? + "\n")?;
    }
    match out.error {
        Some(e) => Err(CliError::Infeasible(e)),
        None => Ok(()),
    }
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let grid = SweepGrid { offsets: args.offsets.clone(), alphas: args.alphas.clone() };
    for config in load_configs(&args.source, std::env::var(SEED_ENV).ok().as_deref())? {
        print!("{}", sweep(&config, &grid, &config.out_dir.join(format!("{}-sweep", config.name)))?);
    }
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> CliResult<()> {
    let out = args.out.clone().unwrap_or_else(|| args.csv.with_extension("svg"));
    write_plot(&args.csv, &out)?;
    println!("{}", out.display());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Table1(a) => cmd_table1(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Plot(a) => cmd_plot(a),
    }
}
