//! Suboptimality gaps, regret, the run-time bound and tail bounds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latency::{expected_max, variance_of_max, Superarm, WorkerPool};
use crate::policies::{select_superarm_optimal, BanditState, Policy, RoundSchedule};

/// Largest pool for which [`delta_min_exhaustive`] enumerates superarms.
pub const MAX_ENUMERATED_WORKERS: usize = 20;

/// One iteration of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub round: usize,
    /// Workers whose results were used: the employed superarm, or the `k`
    /// responsive workers for adaptive k-sync.
    pub superarm: Superarm,
    /// Per-member response times, aligned with `superarm.members()`.
    pub responses: Vec<f64>,
    pub response_time: f64,
    pub cum_time: f64,
    pub employments: u64,
    pub cum_employments: u64,
    pub model_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub policy: Policy,
    pub seed: u64,
    pub schedule: RoundSchedule,
    pub rows: Vec<TraceRow>,
    /// Employments per worker over the whole run.
    pub employment_counts: Vec<u64>,
    /// Employments per worker during the last round.
    pub final_round_counts: Vec<u64>,
    /// Bandit bookkeeping (absent for adaptive k-sync).
    pub bandit: Option<BanditState>,
    /// Iterations whose superarm had a larger expected maximum than the
    /// optimal one of the same size.
    pub suboptimal_iterations: u64,
    pub initial_error: Option<f64>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// The last row whose cumulative employments do not exceed `budget`.
    pub fn at_employments(&self, budget: u64) -> Option<&TraceRow> {
        let idx = self.rows.partition_point(|row| row.cum_employments <= budget);
        idx.checked_sub(1).map(|i| &self.rows[i])
    }
}

/// Gaps for one round size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundGap {
    pub round: usize,
    pub optimal: Superarm,
    pub optimal_mean: f64,
    pub optimal_variance: f64,
    pub worst: Superarm,
    pub worst_mean: f64,
    /// `μ_worst − μ_optimal`.
    pub max_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rounds: Vec<RoundGap>,
    /// For each position `ν ∈ [1, b]`, the smallest positive element gap of a
    /// `ν`-th fastest arm (`None` when no slower mean exists).
    pub element_gaps: Vec<Option<f64>>,
    pub delta_min: Option<f64>,
}

impl GapReport {
    pub fn round(&self, r: usize) -> &RoundGap {
        &self.rounds[r - 1]
    }
}

/// Exact superarm gaps for every round of `schedule`.
///
/// The minimum element gap uses the pairwise reduction: the `ν`-th fastest
/// arm of any superarm sits at some overall rank `p ≥ ν`, so the smallest
/// positive gap at position `ν` is the distance from the `ν`-th smallest mean
/// to the next strictly larger mean. [`delta_min_exhaustive`] checks this
/// against full enumeration.
pub fn compute_gaps(pool: &WorkerPool, schedule: &RoundSchedule) -> Result<GapReport> {
    let b = schedule.rounds();
    if b > pool.len() {
        return Err(invalid("b", format!("{b} rounds exceed the {} workers", pool.len())));
    }
    let ranked = pool.ranked();
    let mut rounds = Vec::with_capacity(b);
    for r in 1..=b {
        let optimal = select_superarm_optimal(pool, r)?;
        let worst = Superarm::new(ranked[ranked.len() - r..].to_vec())?;
        let optimal_rates = pool.rates_of(&optimal);
        let optimal_mean = expected_max(&optimal_rates)?;
        let optimal_variance = variance_of_max(&optimal_rates)?;
        let worst_mean = expected_max(&pool.rates_of(&worst))?;
        rounds.push(RoundGap {
            round: r,
            optimal,
            optimal_mean,
            optimal_variance,
            worst,
            worst_mean,
            max_gap: (worst_mean - optimal_mean).max(0.0),
        });
    }
    let mut sorted = pool.means();
    sorted.sort_by(f64::total_cmp);
    let element_gaps: Vec<Option<f64>> = (0..b)
        .map(|nu| {
            let base = sorted[nu];
            sorted[nu + 1..].iter().find(|&&m| m > base).map(|&m| m - base)
        })
        .collect();
    let delta_min = element_gaps.iter().flatten().copied().min_by(f64::total_cmp);
    Ok(GapReport {
        rounds,
        element_gaps,
        delta_min,
    })
}

/// Minimum element gap by enumerating every superarm of size `r ≤ b`.
pub fn delta_min_exhaustive(pool: &WorkerPool, b: usize) -> Result<Option<f64>> {
    let n = pool.len();
    if n > MAX_ENUMERATED_WORKERS {
        return Err(Error::TooManyWorkers {
            len: n,
            cap: MAX_ENUMERATED_WORKERS,
        });
    }
    if b == 0 || b > n {
        return Err(Error::SuperarmSizeOutOfRange { size: b, workers: n });
    }
    let means = pool.means();
    let mut sorted = means.clone();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<f64> = None;
    for mask in 1u32..(1 << n) {
        let r = mask.count_ones() as usize;
        if r > b {
            continue;
        }
        let mut arm: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| means[i]).collect();
        arm.sort_by(f64::total_cmp);
        for (nu, &m) in arm.iter().enumerate() {
            // the optimal superarm of size r holds the r smallest means
            let gap = m - sorted[nu];
            if gap > 0.0 {
                best = Some(best.map_or(gap, |g: f64| g.min(gap)));
            }
        }
    }
    Ok(best)
}

/// Realized regret curve `R_j` for `j = 1..=len(trace)`.
///
/// `R_j = t_j − Σ_{r: j > T_{r−1}} (min{j, T_r} − T_{r−1}) μ_{A^{r,*}}`.
pub fn empirical_regret(trace: &RunTrace, gaps: &GapReport) -> Result<Vec<f64>> {
    let schedule = &trace.schedule;
    if gaps.rounds.len() != schedule.rounds() {
        return Err(Error::TraceMismatch(format!(
            "gap report has {} rounds, schedule has {}",
            gaps.rounds.len(),
            schedule.rounds()
        )));
    }
    let mut optimal_time = 0.0;
    let mut curve = Vec::with_capacity(trace.rows.len());
    for (idx, row) in trace.rows.iter().enumerate() {
        let j = idx as u64 + 1;
        let round = schedule
            .round_of(j)
            .ok_or_else(|| Error::TraceMismatch(format!("iteration {j} is beyond the horizon")))?;
        if row.iteration != j || row.round != round {
            return Err(Error::TraceMismatch(format!(
                "row {idx} is iteration {} of round {}, expected iteration {j} of round {round}",
                row.iteration, row.round
            )));
        }
        optimal_time += gaps.round(round).optimal_mean;
        curve.push(row.cum_time - optimal_time);
    }
    Ok(curve)
}

/// Pointwise mean of equally long curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = curves.first().ok_or_else(|| invalid("curves", "need at least one curve"))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(invalid("curves", "curves differ in length"));
    }
    let k = curves.len() as f64;
    Ok((0..first.len())
        .map(|j| curves.iter().map(|c| c[j]).sum::<f64>() / k)
        .collect())
}

/// Which iteration count enters the logarithm of the regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LogArgument {
    /// `log(j)`.
    #[default]
    Iteration,
    /// `log(min{j, T_u})` with `u` the current round.
    RoundHorizon,
}

/// Additive constant per round in the regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdditiveTerm {
    /// `u·π²/3`.
    #[default]
    PiSquaredOverThree,
    /// `u·π/3`.
    PiOverThree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RegretBoundOptions {
    pub log_argument: LogArgument,
    pub additive: AdditiveTerm,
}

/// Upper bound on the expected regret of the bandit policy at iteration `j`:
///
/// `max_{r: j > T_{r−1}} Δ_{r,max} · n · (48 log j / min{δ², δ} + 1 + u·π²/3)`.
pub fn theorem1_bound(
    pool: &WorkerPool,
    schedule: &RoundSchedule,
    gaps: &GapReport,
    j: u64,
    options: RegretBoundOptions,
) -> Result<f64> {
    if !pool.is_theorem_valid() {
        return Err(Error::TheoremAssumption(pool.min_rate()));
    }
    if j == 0 {
        return Err(Error::ZeroIteration);
    }
    let delta = match gaps.delta_min {
        Some(d) if d > 0.0 => d,
        _ => return Err(Error::ZeroGap),
    };
    let started = started_rounds(schedule, j);
    let u = started as f64;
    let max_gap = (1..=started)
        .map(|r| gaps.round(r).max_gap)
        .fold(0.0, f64::max);
    let log_arg = match options.log_argument {
        LogArgument::Iteration => j,
        LogArgument::RoundHorizon => j.min(schedule.switching_point(started)),
    };
    let additive = match options.additive {
        AdditiveTerm::PiSquaredOverThree => std::f64::consts::PI.powi(2) / 3.0,
        AdditiveTerm::PiOverThree => std::f64::consts::PI / 3.0,
    };
    let exploration = 48.0 * (log_arg as f64).ln() / delta.min(delta * delta);
    Ok(max_gap * pool.len() as f64 * (exploration + 1.0 + u * additive))
}

/// Number of rounds `r` with `j > T_{r−1}`.
fn started_rounds(schedule: &RoundSchedule, j: u64) -> usize {
    (1..=schedule.rounds())
        .filter(|&r| j > schedule.switching_point(r - 1))
        .count()
}

/// A high-probability bound on the wall-clock time to reach an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBound {
    pub time: f64,
    pub probability: f64,
}

/// Run-time bound at iteration `j` for confidence parameter `epsilon`.
///
/// The time is `regret_bound + Σ_r μ_{A^{r,*}} (min{j,T_r} − T_{r−1}) (1+ε)`
/// and holds with probability at least
/// `Π_r (1 − σ²_{A^{r,*}} / (μ²_{A^{r,*}} (min{j,T_r} − T_{r−1}) ε²))`,
/// each factor clamped at zero.
pub fn theorem2_bound(
    schedule: &RoundSchedule,
    gaps: &GapReport,
    j: u64,
    regret_bound: f64,
    epsilon: f64,
) -> Result<TimeBound> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "confidence parameter must be positive"));
    }
    let mut time = regret_bound;
    let mut probability = 1.0;
    for r in 1..=started_rounds(schedule, j) {
        let len = schedule.iterations_in_round(r, j) as f64;
        let gap = gaps.round(r);
        time += gap.optimal_mean * len * (1.0 + epsilon);
        let factor = 1.0 - gap.optimal_variance / (gap.optimal_mean.powi(2) * len * epsilon * epsilon);
        if factor < 0.0 {
            log::warn!("probability factor for round {r} at j = {j} is {factor:.3}; clamped to 0");
        }
        probability *= factor.max(0.0);
    }
    Ok(TimeBound { time, probability })
}

/// Sub-gamma right tail: `P(Z > sqrt(2σ²ε) + cε) ≤ e^{−ε}`.
///
/// Returns `(threshold, bound)`.
pub fn subgamma_tail(epsilon: f64, sigma2: f64, scale: f64) -> Result<(f64, f64)> {
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon", "must be non-negative"));
    }
    Ok(((2.0 * sigma2 * epsilon).sqrt() + scale * epsilon, (-epsilon).exp()))
}

/// Sub-Gaussian left tail: `P(Z ≤ −ε) ≤ exp(−ε²/(2σ²))`.
pub fn subgaussian_tail(epsilon: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(invalid("sigma2", "variance proxy must be positive"));
    }
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon", "must be non-negative"));
    }
    Ok((-epsilon * epsilon / (2.0 * sigma2)).exp())
}

/// Variance proxy and scale of the centered empirical mean of `samples`
/// exponential draws with rate `rate`: `(1/(Tλ²), 1/(Tλ))`.
pub fn empirical_mean_tail_params(samples: u64, rate: f64) -> (f64, f64) {
    let t = samples as f64;
    (1.0 / (t * rate * rate), 1.0 / (t * rate))
}
