use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cmab_sgd::analysis::{compute_gaps, theorem1_bound, theorem2_bound, LogArgument, RegretBoundOptions};
use cmab_sgd::harness::{
    environment_seed, resolve_schedule, run_comparison, run_single, write_trace_file, Environment,
};
use cmab_sgd::verify::{check_expected_max, check_gaps, check_tails, check_time_coverage};
use cmab_sgd::{Error, ExperimentConfig, Result, RoundSchedule, WorkerPool};

#[derive(Parser, Debug)]
#[command(version, about = "Seeded simulator for bandit-scheduled distributed SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one policy for one seed and write its trace CSV.
    Run(Common),
    /// Run every policy over every seed and write the figure tables.
    Compare(Common),
    /// Evaluate gaps and run-time bounds for a pool and schedule.
    Bounds(BoundsArgs),
    /// Check the closed forms against simulation.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed, or a seed list (`0..10`, `1,4,7`) for `compare`.
    #[arg(long)]
    seed: Option<String>,
    /// Policy name, or a comma-separated list for `compare`.
    #[arg(long)]
    policy: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `theta:<x>` or `list:<T1>,...,<Tb>`.
    #[arg(long)]
    schedule: Option<String>,
    /// Radius variant: `plain` or `scaled`.
    #[arg(long)]
    variant: Option<String>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {pair}` is not key=value")))?;
            config.set(key.trim(), value.trim())?;
        }
        // variant first so that a plain `cmab` policy picks it up
        if let Some(v) = &self.variant {
            config.set("variant", v)?;
        }
        let flags = [
            ("seeds", &self.seed),
            ("policies", &self.policy),
            ("schedule", &self.schedule),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    common: Common,
    /// Worker means; drawn from the config's grid when absent.
    #[arg(long, value_delimiter = ',')]
    means: Vec<f64>,
    /// Confidence parameters for the run-time bound.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
    epsilon: Vec<f64>,
    /// Iterations to evaluate at; defaults to every switching point.
    #[arg(long, value_delimiter = ',')]
    at: Vec<u64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Random rate lists checked against the exact expected maximum.
    #[arg(long, default_value_t = 100)]
    lists: usize,
    /// Trials per tail-bound check.
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Seeds for the run-time coverage check.
    #[arg(long, default_value_t = 200)]
    coverage_runs: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(common) => run(&common),
        Command::Compare(common) => {
            let config = common.load()?;
            let summary = run_comparison(&config)?;
            print_json(&summary.policies)?;
            log::info!("tables written to {}", config.out.display());
            Ok(())
        }
        Command::Bounds(args) => bounds(&args),
        Command::Verify(args) => verify(&args),
    }
}

fn run(common: &Common) -> Result<()> {
    let config = common.load()?;
    let [seed] = config.seeds[..] else {
        return Err(Error::Config("`run` takes exactly one seed".into()));
    };
    let [policy] = config.policies[..] else {
        return Err(Error::Config("`run` takes exactly one policy".into()));
    };
    let trace = run_single(&config, policy, seed)?;
    create_dir(&config.out)?;
    let path = config.out.join(format!("{policy}_{seed}.csv"));
    write_trace_file(&trace, &path)?;
    let last = trace.last().expect("schedules have at least one iteration");
    print_json(&serde_json::json!({
        "policy": policy,
        "seed": seed,
        "trace": path,
        "switching_points": trace.schedule.switching_points(),
        "iterations": last.iteration,
        "cum_time": last.cum_time,
        "cum_employments": last.cum_employments,
        "model_error": last.model_error,
        "suboptimal_iterations": trace.suboptimal_iterations,
    }))
}

#[derive(Serialize)]
struct BoundRow {
    iteration: u64,
    theorem1: f64,
    theorem1_round_horizon: f64,
    epsilon: f64,
    time_bound: f64,
    probability: f64,
}

fn bounds(args: &BoundsArgs) -> Result<()> {
    let config = args.common.load()?;
    let pool = if args.means.is_empty() {
        Environment::generate(&config, environment_seed(&config, config.seeds[0]))?.pool
    } else {
        WorkerPool::from_means(&args.means)?
    };
    let schedule = if args.means.is_empty() {
        resolve_schedule(&config)?
    } else {
        explicit_schedule(&config)?
    };
    let gaps = compute_gaps(&pool, &schedule)?;
    let at = if args.at.is_empty() {
        schedule.switching_points().to_vec()
    } else {
        args.at.clone()
    };
    let mut rows = Vec::new();
    for &j in &at {
        let plain = theorem1_bound(&pool, &schedule, &gaps, j, RegretBoundOptions::default())?;
        let horizon = RegretBoundOptions {
            log_argument: LogArgument::RoundHorizon,
            ..Default::default()
        };
        let truncated = theorem1_bound(&pool, &schedule, &gaps, j, horizon)?;
        for &epsilon in &args.epsilon {
            let tb = theorem2_bound(&schedule, &gaps, j, plain, epsilon)?;
            rows.push(BoundRow {
                iteration: j,
                theorem1: plain,
                theorem1_round_horizon: truncated,
                epsilon,
                time_bound: tb.time,
                probability: tb.probability,
            });
        }
    }
    let report = serde_json::json!({
        "means": pool.means(),
        "switching_points": schedule.switching_points(),
        "gaps": gaps,
        "bounds": rows,
    });
    create_dir(&config.out)?;
    write_json(&config.out.join("bounds.json"), &report)?;
    print_json(&report)
}

/// A pool given on the command line has no data set to calibrate against.
fn explicit_schedule(config: &ExperimentConfig) -> Result<RoundSchedule> {
    match &config.schedule {
        cmab_sgd::config::ScheduleSpec::List { points } => RoundSchedule::new(points.clone()),
        _ => Err(Error::Config("`--means` needs `--schedule list:...`".into())),
    }
}

fn verify(args: &VerifyArgs) -> Result<()> {
    let mut config = args.common.load()?;
    let seed = config.seeds[0];
    let samples = config.mc_samples;

    let max_checks = check_expected_max(args.lists, 8, (0.5, 10.0), samples, seed)?;
    let max_pass = max_checks.iter().filter(|c| c.within).count() as f64 / max_checks.len() as f64;

    let tails = check_tails(&[0.25, 0.5, 1.0, 2.0], &[4, 16, 64], &[1.0, 2.0], args.trials, seed)?;

    let gap_pool = WorkerPool::from_means(&[0.2, 0.9, 0.4, 0.7, 0.3, 0.5])?;
    let gaps = check_gaps(&gap_pool, 4, samples, seed)?;

    config.workers = 5;
    config.rounds = 3;
    config.samples = 30;
    config.dim = 3;
    let env = Environment::with_pool(&config, seed, WorkerPool::from_means(&[0.2, 0.4, 0.5, 0.7, 0.9])?)?;
    let schedule = RoundSchedule::new(vec![50, 150, 300])?;
    let coverage = check_time_coverage(&env, &schedule, &[0.5, 1.0, 2.0], &[50, 150, 300], 0..args.coverage_runs)?;

    let passed = max_pass >= 0.99
        && tails.iter().all(|c| c.holds)
        && gaps.iter().all(|c| c.within)
        && coverage.iter().all(|c| c.holds);
    let report = serde_json::json!({
        "passed": passed,
        "expected_max": { "lists": max_checks.len(), "within_3se": max_pass },
        "tails": tails,
        "gaps": gaps,
        "coverage": coverage,
    });
    create_dir(&config.out)?;
    write_json(&config.out.join("verify.json"), &report)?;
    print_json(&report)?;
    if passed {
        Ok(())
    } else {
        Err(Error::Config("one or more Monte Carlo checks failed; see verify.json".into()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::Io(e.to_string()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
