//! Experiment orchestration and CSV/JSON outputs.
//!
//! Randomness per run comes from two seeds. The environment seed drives the
//! worker means and the data set; the run seed drives response times and
//! batch sampling. Each lives on its own named stream.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{
    compute_gaps, empirical_regret, mean_curve, theorem1_bound, GapReport, LogArgument, RegretBoundOptions, RunTrace,
    TraceRow,
};
use crate::config::{ExperimentConfig, ScheduleSpec};
use crate::error::{Error, Result};
use crate::latency::{Superarm, WorkerPool};
use crate::policies::{
    adaptive_ksync_step, compute_schedule, record_outcome, select_superarm_cmab, select_superarm_optimal, BanditState,
    Policy, RoundSchedule,
};
use crate::rng::{stream_rng, Stream};
use crate::sgd::{BoundParams, SgdProblem};

pub const TRACE_HEADER: &str =
    "iter,round,policy,seed,superarm,response_time,cum_time,employments,cum_employments,model_error";

/// A worker pool and data set.
#[derive(Debug, Clone)]
pub struct Environment {
    pub seed: u64,
    pub pool: WorkerPool,
    pub problem: SgdProblem,
    pub params: BoundParams,
}

impl Environment {
    pub fn generate(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let pool = config
            .means
            .sample(config.workers, &mut stream_rng(seed, Stream::MeanAssignment))?;
        let problem = SgdProblem::generate(
            config.samples,
            config.dim,
            config.eta,
            config.rounds,
            &mut stream_rng(seed, Stream::DataGeneration),
        )?;
        let params = problem.estimate_bound_params()?;
        Ok(Self {
            seed,
            pool,
            problem,
            params,
        })
    }

    /// An environment with a given pool and freshly generated data.
    pub fn with_pool(config: &ExperimentConfig, seed: u64, pool: WorkerPool) -> Result<Self> {
        if pool.len() != config.workers {
            return Err(Error::Config(format!(
                "pool has {} workers but n = {}",
                pool.len(),
                config.workers
            )));
        }
        let mut env = Self::generate(config, seed)?;
        env.pool = pool;
        Ok(env)
    }
}

pub fn environment_seed(config: &ExperimentConfig, run_seed: u64) -> u64 {
    config.environment_seed.unwrap_or(run_seed)
}

/// Switching points for `config`.
///
/// Computed schedules are derived from the calibration environment (the
/// environment seed, or the first run seed) and shared by every run.
pub fn resolve_schedule(config: &ExperimentConfig) -> Result<RoundSchedule> {
    config.validate()?;
    match &config.schedule {
        ScheduleSpec::List { points } => {
            let schedule = RoundSchedule::new(points.clone())?;
            if schedule.horizon() > config.j_cap {
                return Err(Error::InvalidSchedule(format!(
                    "T_b = {} exceeds j_cap = {}",
                    schedule.horizon(),
                    config.j_cap
                )));
            }
            Ok(schedule)
        }
        ScheduleSpec::Theta { theta } => {
            let calibration = environment_seed(config, config.seeds[0]);
            let env = Environment::generate(config, calibration)?;
            let p = &env.params;
            log::info!(
                "bound constants from environment {calibration}: L = {:.4e}, c = {:.4e}, sigma2 = {:.4e}, gap = {:.4e}, s = {}",
                p.lipschitz,
                p.convexity,
                p.sigma2,
                p.initial_gap,
                p.batch_size
            );
            compute_schedule(p, config.rounds, *theta, config.j_cap)
        }
    }
}

/// Runs one policy on a prepared environment.
pub fn run_in(env: &Environment, schedule: &RoundSchedule, policy: Policy, seed: u64, train: bool) -> Result<RunTrace> {
    let pool = &env.pool;
    let n = pool.len();
    if schedule.rounds() > n {
        return Err(Error::InvalidSchedule(format!(
            "{} rounds need more than the {n} workers",
            schedule.rounds()
        )));
    }
    let mut latency_rng = stream_rng(seed, Stream::WorkerLatency);
    let mut batch_rng = stream_rng(seed, Stream::BatchSampling);
    let mut problem = env.problem.clone();
    problem.reset();

    let bandit_policy = policy != Policy::AdaptiveKsync;
    let mut state = BanditState::new(n);
    let mut employment_counts = vec![0u64; n];
    let mut final_round_counts = vec![0u64; n];
    let mut suboptimal_iterations = 0u64;
    let mut rows = Vec::with_capacity(schedule.horizon() as usize);
    let mut cum_time = 0.0;
    let mut cum_employments = 0u64;
    let mut optimal_cache: Option<(usize, Superarm)> = None;

    for j in 1..=schedule.horizon() {
        let round = schedule.round_of(j).expect("j is within the horizon");
        let (used, responses, response_time, employed): (Superarm, Vec<f64>, f64, Vec<usize>) = match policy {
            Policy::AdaptiveKsync => {
                let step = adaptive_ksync_step(pool, round, &mut latency_rng)?;
                (step.responsive, step.responses, step.time, (0..n).collect())
            }
            _ => {
                let superarm = match policy.variant() {
                    Some(variant) => select_superarm_cmab(&state, variant, round, j)?,
                    None => match &optimal_cache {
                        Some((r, arm)) if *r == round => arm.clone(),
                        _ => {
                            let arm = select_superarm_optimal(pool, round)?;
                            optimal_cache = Some((round, arm.clone()));
                            arm
                        }
                    },
                };
                let responses = pool.superarm_responses(&superarm, &mut latency_rng)?;
                let time = responses.iter().copied().fold(0.0, f64::max);
                if record_outcome(&mut state, &superarm, &responses, pool)? {
                    suboptimal_iterations += 1;
                }
                let employed = superarm.members().to_vec();
                (superarm, responses, time, employed)
            }
        };
        for &i in &employed {
            employment_counts[i] += 1;
            if round == schedule.rounds() {
                final_round_counts[i] += 1;
            }
        }
        let model_error = if train {
            let gradients: Vec<Vec<f64>> = used
                .members()
                .iter()
                .map(|_| problem.partial_gradient(&problem.sample_batch(&mut batch_rng)))
                .collect();
            problem.apply_update(&gradients)?;
            Some(problem.model_error())
        } else {
            None
        };
        cum_time += response_time;
        cum_employments += employed.len() as u64;
        rows.push(TraceRow {
            iteration: j,
            round,
            superarm: used,
            responses,
            response_time,
            cum_time,
            employments: employed.len() as u64,
            cum_employments,
            model_error,
        });
    }

    let initial_error = train.then(|| {
        problem.reset();
        problem.model_error()
    });
    Ok(RunTrace {
        policy,
        seed,
        schedule: schedule.clone(),
        rows,
        employment_counts,
        final_round_counts,
        bandit: bandit_policy.then_some(state),
        suboptimal_iterations,
        initial_error,
    })
}

/// Runs `policy` for one run seed under `config`.
pub fn run_single(config: &ExperimentConfig, policy: Policy, seed: u64) -> Result<RunTrace> {
    let schedule = resolve_schedule(config)?;
    let env = Environment::generate(config, environment_seed(config, seed))?;
    run_in(&env, &schedule, policy, seed, config.train)
}

/// The `b` fastest workers as judged from one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identification {
    pub policy: Policy,
    pub seed: u64,
    /// The `b` most-employed workers of the final round, ties by lowest index.
    pub chosen: Vec<usize>,
    /// Chosen workers whose mean is no larger than the `b`-th smallest mean.
    pub correct: usize,
    pub accuracy: f64,
    pub exact: bool,
}

pub fn identify_fastest(trace: &RunTrace, pool: &WorkerPool) -> Result<Identification> {
    let b = trace.schedule.rounds();
    if trace.final_round_counts.len() != pool.len() {
        return Err(Error::TraceMismatch("trace and pool differ in worker count".into()));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &c| {
        trace.final_round_counts[c]
            .cmp(&trace.final_round_counts[a])
            .then(a.cmp(&c))
    });
    order.truncate(b);
    order.sort_unstable();
    let mut sorted = pool.means();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[b - 1];
    let correct = order.iter().filter(|&&i| pool.means()[i] <= threshold).count();
    Ok(Identification {
        policy: trace.policy,
        seed: trace.seed,
        chosen: order,
        correct,
        accuracy: correct as f64 / b as f64,
        exact: correct == b,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    iter: u64,
    round: usize,
    policy: &'a str,
    seed: u64,
    superarm: String,
    response_time: f64,
    cum_time: f64,
    employments: u64,
    cum_employments: u64,
    model_error: Option<f64>,
}

pub fn write_trace<W: Write>(trace: &RunTrace, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in &trace.rows {
        writer.serialize(CsvRow {
            iter: row.iteration,
            round: row.round,
            policy: trace.policy.name(),
            seed: trace.seed,
            superarm: row.superarm.to_string(),
            response_time: row.response_time,
            cum_time: row.cum_time,
            employments: row.employments,
            cum_employments: row.cum_employments,
            model_error: row.model_error,
        })?;
    }
    if trace.rows.is_empty() {
        writer.write_record(TRACE_HEADER.split(','))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_trace_file(trace: &RunTrace, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_trace(trace, std::io::BufWriter::new(file))
}

/// Per-policy results averaged over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub mean_final_error: Option<f64>,
    /// Mean model error at the last iteration within the budget `B`.
    pub mean_error_at_budget: Option<f64>,
    pub mean_final_time: f64,
    pub mean_final_employments: f64,
    pub mean_suboptimal_iterations: f64,
    pub identification_accuracy: f64,
    pub exact_identifications: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub config: ExperimentConfig,
    /// How switching points were chosen.
    pub schedule_rule: String,
    pub switching_points: Vec<u64>,
    pub budget: u64,
    pub policies: Vec<PolicySummary>,
    pub identifications: Vec<Identification>,
}

struct PolicyRuns {
    policy: Policy,
    traces: Vec<RunTrace>,
    pools: Vec<WorkerPool>,
}

/// Runs every (policy, seed) pair and writes the figure tables to
/// `config.out`: per-run traces, `fig1.csv` (error against iterations, time
/// and employments), `fig2.csv` (employments by speed rank), `fig3.csv`
/// (regret against the regret bound) and `summary.json`.
pub fn run_comparison(config: &ExperimentConfig) -> Result<ComparisonSummary> {
    if config.policies.len() < 2 {
        return Err(Error::Config("comparison needs at least two policies".into()));
    }
    let schedule = resolve_schedule(config)?;
    let out = &config.out;
    fs::create_dir_all(out.join("traces")).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;

    let mut envs: Vec<Environment> = Vec::new();
    let env_for = |envs: &mut Vec<Environment>, seed: u64| -> Result<usize> {
        let env_seed = environment_seed(config, seed);
        if let Some(pos) = envs.iter().position(|e| e.seed == env_seed) {
            return Ok(pos);
        }
        envs.push(Environment::generate(config, env_seed)?);
        Ok(envs.len() - 1)
    };

    let mut all_runs = Vec::new();
    for &policy in &config.policies {
        let mut runs = PolicyRuns {
            policy,
            traces: Vec::new(),
            pools: Vec::new(),
        };
        for &seed in &config.seeds {
            let idx = env_for(&mut envs, seed)?;
            log::info!("running {policy} seed {seed}");
            let trace = run_in(&envs[idx], &schedule, policy, seed, config.train)?;
            write_trace_file(&trace, &out.join("traces").join(format!("{policy}_{seed}.csv")))?;
            runs.traces.push(trace);
            runs.pools.push(envs[idx].pool.clone());
        }
        all_runs.push(runs);
    }

    write_fig1(&all_runs, config.stride, &out.join("fig1.csv"))?;
    write_fig2(&all_runs, &out.join("fig2.csv"))?;
    write_fig3(&all_runs, &schedule, config.stride, &out.join("fig3.csv"))?;

    let budget = schedule.budget();
    let mut policies = Vec::new();
    let mut identifications = Vec::new();
    for runs in &all_runs {
        let k = runs.traces.len() as f64;
        let ids = runs
            .traces
            .iter()
            .zip(&runs.pools)
            .map(|(t, p)| identify_fastest(t, p))
            .collect::<Result<Vec<_>>>()?;
        let mean_of = |f: &dyn Fn(&RunTrace) -> Option<f64>| -> Option<f64> {
            let values: Option<Vec<f64>> = runs.traces.iter().map(f).collect();
            values.map(|v| v.iter().sum::<f64>() / k)
        };
        policies.push(PolicySummary {
            policy: runs.policy,
            mean_final_error: mean_of(&|t| t.last().and_then(|r| r.model_error)),
            mean_error_at_budget: mean_of(&|t| t.at_employments(budget).and_then(|r| r.model_error)),
            mean_final_time: mean_of(&|t| t.last().map(|r| r.cum_time)).unwrap_or(0.0),
            mean_final_employments: mean_of(&|t| t.last().map(|r| r.cum_employments as f64)).unwrap_or(0.0),
            mean_suboptimal_iterations: mean_of(&|t| Some(t.suboptimal_iterations as f64)).unwrap_or(0.0),
            identification_accuracy: ids.iter().map(|i| i.accuracy).sum::<f64>() / k,
            exact_identifications: ids.iter().filter(|i| i.exact).count(),
        });
        identifications.extend(ids);
    }

    let schedule_rule = match &config.schedule {
        ScheduleSpec::Theta { theta } => format!("theta-threshold on the convergence bound, theta = {theta}"),
        ScheduleSpec::List { .. } => "explicit list".to_string(),
    };
    let summary = ComparisonSummary {
        config: config.clone(),
        schedule_rule,
        switching_points: schedule.switching_points().to_vec(),
        budget,
        policies,
        identifications,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(out.join("summary.json"), json).map_err(|e| Error::Io(e.to_string()))?;
    Ok(summary)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn write_fig1(all_runs: &[PolicyRuns], stride: u64, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "iter", "mean_cum_time", "mean_cum_employments", "mean_model_error"])?;
    for runs in all_runs {
        let k = runs.traces.len() as f64;
        let len = runs.traces[0].rows.len();
        for idx in (0..len).filter(|i| (*i as u64 + 1) % stride == 0 || *i + 1 == len) {
            let rows: Vec<&TraceRow> = runs.traces.iter().map(|t| &t.rows[idx]).collect();
            let time = rows.iter().map(|r| r.cum_time).sum::<f64>() / k;
            let emp = rows.iter().map(|r| r.cum_employments as f64).sum::<f64>() / k;
            let err: Option<f64> = rows
                .iter()
                .map(|r| r.model_error)
                .sum::<Option<f64>>()
                .map(|s| s / k);
            w.write_record([
                runs.policy.name().to_string(),
                (idx + 1).to_string(),
                time.to_string(),
                emp.to_string(),
                opt(err),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_fig2(all_runs: &[PolicyRuns], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "rank", "mean_worker_mean", "mean_employments"])?;
    for runs in all_runs {
        let n = runs.pools[0].len();
        let k = runs.traces.len() as f64;
        let mut means = vec![0.0; n];
        let mut counts = vec![0.0; n];
        for (trace, pool) in runs.traces.iter().zip(&runs.pools) {
            for (rank, worker) in pool.ranked().into_iter().enumerate() {
                means[rank] += pool.means()[worker] / k;
                counts[rank] += trace.employment_counts[worker] as f64 / k;
            }
        }
        for rank in 0..n {
            w.write_record([
                runs.policy.name().to_string(),
                (rank + 1).to_string(),
                means[rank].to_string(),
                counts[rank].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean simulated regret and the mean regret bound per iteration.
///
/// Both bound forms are written. Bounds are left empty when a pool has no
/// positive gap or a rate below one.
fn write_fig3(all_runs: &[PolicyRuns], schedule: &RoundSchedule, stride: u64, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "iter", "round", "mean_regret", "theorem1_bound", "theorem1_bound_round_horizon"])?;
    for runs in all_runs.iter().filter(|r| r.policy != Policy::AdaptiveKsync) {
        let gaps = runs
            .pools
            .iter()
            .map(|p| compute_gaps(p, schedule))
            .collect::<Result<Vec<GapReport>>>()?;
        let curves = runs
            .traces
            .iter()
            .zip(&gaps)
            .map(|(t, g)| empirical_regret(t, g))
            .collect::<Result<Vec<_>>>()?;
        let mean = mean_curve(&curves)?;
        let len = mean.len();
        for idx in (0..len).filter(|i| (*i as u64 + 1) % stride == 0 || *i + 1 == len) {
            let j = idx as u64 + 1;
            let bound_for = |log_argument| -> Option<f64> {
                let options = RegretBoundOptions {
                    log_argument,
                    ..Default::default()
                };
                let bounds: Option<Vec<f64>> = runs
                    .pools
                    .iter()
                    .zip(&gaps)
                    .map(|(p, g)| theorem1_bound(p, schedule, g, j, options).ok())
                    .collect();
                bounds.map(|b| b.iter().sum::<f64>() / b.len() as f64)
            };
            w.write_record([
                runs.policy.name().to_string(),
                j.to_string(),
                schedule.round_of(j).unwrap_or(0).to_string(),
                mean[idx].to_string(),
                opt(bound_for(LogArgument::Iteration)),
                opt(bound_for(LogArgument::RoundHorizon)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
