//! Worker-selection policies and round scheduling.
//!
//! Three policies choose which workers to employ each iteration:
//!
//! * the bandit policy picks the `r` workers with the lowest lower confidence
//!   bounds on their mean response time,
//! * the optimal policy knows the true means and picks the `r` fastest,
//! * adaptive k-sync tasks every worker and waits for the `k` fastest.
//!
//! Iterations are grouped into rounds; round `r` employs `r` workers per
//! iteration and ends at switching point `T_r`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latency::{Superarm, WorkerPool};
use crate::sgd::{transient_bound, BoundParams};

/// Per-worker bandit bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pulls: Vec<u64>,
    response_sums: Vec<f64>,
    suboptimal_pulls: Vec<u64>,
    iteration: u64,
}

impl BanditState {
    pub fn new(workers: usize) -> Self {
        Self {
            pulls: vec![0; workers],
            response_sums: vec![0.0; workers],
            suboptimal_pulls: vec![0; workers],
            iteration: 0,
        }
    }

    /// A state in which every worker has been observed `pulls` times with an
    /// empirical mean equal to `means[i]`.
    pub fn with_means(means: &[f64], pulls: u64) -> Self {
        Self {
            pulls: vec![pulls; means.len()],
            response_sums: means.iter().map(|m| m * pulls as f64).collect(),
            suboptimal_pulls: vec![0; means.len()],
            iteration: 0,
        }
    }

    pub fn workers(&self) -> usize {
        self.pulls.len()
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn response_sums(&self) -> &[f64] {
        &self.response_sums
    }

    pub fn suboptimal_pulls(&self) -> &[u64] {
        &self.suboptimal_pulls
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn total_pulls(&self) -> u64 {
        self.pulls.iter().sum()
    }

    pub fn total_suboptimal_pulls(&self) -> u64 {
        self.suboptimal_pulls.iter().sum()
    }

    /// `R_i / T_i`, or `None` for a worker that was never employed.
    pub fn empirical_mean(&self, worker: usize) -> Option<f64> {
        match self.pulls.get(worker) {
            Some(&t) if t > 0 => Some(self.response_sums[worker] / t as f64),
            _ => None,
        }
    }

    /// Smallest empirical mean over employed workers.
    pub fn min_empirical_mean(&self) -> Option<f64> {
        (0..self.workers())
            .filter_map(|i| self.empirical_mean(i))
            .min_by(f64::total_cmp)
    }

    fn check_worker(&self, worker: usize) -> Result<()> {
        if worker < self.workers() {
            Ok(())
        } else {
            Err(Error::WorkerOutOfRange {
                index: worker,
                workers: self.workers(),
            })
        }
    }
}

/// Exploration function `f(j)` of the confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusVariant {
    /// `f(j) = 2 ln j`.
    #[default]
    Plain,
    /// `f(j) = 2 ln j · μ̂_min`, with `μ̂_min` over employed workers
    /// (0 when nobody has been employed yet).
    Scaled,
}

impl RadiusVariant {
    pub fn exploration(self, state: &BanditState, j: u64) -> f64 {
        // f(0) is taken as 0 so a state observed before iteration 1 has no radius.
        let base = 2.0 * (j.max(1) as f64).ln();
        match self {
            RadiusVariant::Plain => base,
            RadiusVariant::Scaled => base * state.min_empirical_mean().unwrap_or(0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RadiusVariant::Plain => "plain",
            RadiusVariant::Scaled => "scaled",
        }
    }
}

impl std::str::FromStr for RadiusVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(RadiusVariant::Plain),
            "scaled" => Ok(RadiusVariant::Scaled),
            other => Err(Error::Config(format!("unknown radius variant `{other}` (plain|scaled)"))),
        }
    }
}

/// A scheduling policy run by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    CmabPlain,
    CmabScaled,
    Optimal,
    AdaptiveKsync,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::CmabPlain,
        Policy::CmabScaled,
        Policy::Optimal,
        Policy::AdaptiveKsync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::CmabPlain => "cmab-plain",
            Policy::CmabScaled => "cmab-scaled",
            Policy::Optimal => "optimal",
            Policy::AdaptiveKsync => "adaptive-ksync",
        }
    }

    pub fn cmab(variant: RadiusVariant) -> Self {
        match variant {
            RadiusVariant::Plain => Policy::CmabPlain,
            RadiusVariant::Scaled => Policy::CmabScaled,
        }
    }

    /// The radius variant of a bandit policy.
    pub fn variant(self) -> Option<RadiusVariant> {
        match self {
            Policy::CmabPlain => Some(RadiusVariant::Plain),
            Policy::CmabScaled => Some(RadiusVariant::Scaled),
            _ => None,
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown policy `{s}` (cmab-plain|cmab-scaled|optimal|adaptive-ksync)"
                ))
            })
    }
}

/// `sqrt(4 f(j)/T_i) + 2 f(j)/T_i`, using the counters held in `state`.
pub fn confidence_radius(state: &BanditState, variant: RadiusVariant, worker: usize, j: u64) -> Result<f64> {
    state.check_worker(worker)?;
    if j == 0 {
        return Err(Error::ZeroIteration);
    }
    radius_at(state, variant, worker, j)
}

fn radius_at(state: &BanditState, variant: RadiusVariant, worker: usize, j: u64) -> Result<f64> {
    let pulls = state.pulls[worker];
    if pulls == 0 {
        return Err(Error::UnpulledWorker(worker));
    }
    Ok(radius_with_exploration(variant.exploration(state, j), pulls))
}

/// `sqrt(4f/T) + 2f/T` for a given exploration value `f` and pull count `T`.
pub fn radius_with_exploration(exploration: f64, pulls: u64) -> f64 {
    let t = pulls as f64;
    (4.0 * exploration / t).sqrt() + 2.0 * exploration / t
}

/// Lower confidence bound used to choose workers for iteration `j`.
///
/// `state` must hold the counters after iteration `j − 1`. Unemployed workers
/// get `−∞`; otherwise `μ̂_i(j−1)` minus the radius evaluated at `j − 1`.
pub fn lcb(state: &BanditState, variant: RadiusVariant, worker: usize, j: u64) -> Result<f64> {
    state.check_worker(worker)?;
    if j == 0 {
        return Err(Error::ZeroIteration);
    }
    match state.empirical_mean(worker) {
        None => Ok(f64::NEG_INFINITY),
        Some(mean) => Ok(mean - radius_at(state, variant, worker, j - 1)?),
    }
}

/// The `r` workers with the lowest LCBs, ties broken by lowest index.
pub fn select_superarm_cmab(state: &BanditState, variant: RadiusVariant, r: usize, j: u64) -> Result<Superarm> {
    let n = state.workers();
    if r == 0 || r > n {
        return Err(Error::SuperarmSizeOutOfRange { size: r, workers: n });
    }
    let bounds = (0..n)
        .map(|i| lcb(state, variant, i, j))
        .collect::<Result<Vec<f64>>>()?;
    Superarm::new(lowest_r(&bounds, r))
}

/// The `r` workers with the smallest true means, ties broken by lowest index.
pub fn select_superarm_optimal(pool: &WorkerPool, r: usize) -> Result<Superarm> {
    let n = pool.len();
    if r == 0 || r > n {
        return Err(Error::SuperarmSizeOutOfRange { size: r, workers: n });
    }
    Superarm::new(lowest_r(&pool.means(), r))
}

fn lowest_r(values: &[f64], r: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order.truncate(r);
    order
}

/// Whether `superarm` has a larger expected maximum than the optimal superarm
/// of the same size.
///
/// The expected maximum is strictly increasing in every member's mean, and
/// the optimal superarm's sorted means are elementwise no larger than any
/// other superarm's. So the chosen superarm is suboptimal exactly when its
/// sorted means differ from the optimal sorted means somewhere. This is the
/// same decision as comparing inclusion-exclusion means, but costs
/// `O(r log r)` instead of `O(2^r)`.
pub fn is_suboptimal(pool: &WorkerPool, superarm: &Superarm) -> Result<bool> {
    let optimal = select_superarm_optimal(pool, superarm.len())?;
    let sorted_means = |arm: &Superarm| -> Result<Vec<f64>> {
        let mut m = arm
            .members()
            .iter()
            .map(|&i| pool.mean(i))
            .collect::<Result<Vec<f64>>>()?;
        m.sort_by(f64::total_cmp);
        Ok(m)
    };
    Ok(sorted_means(superarm)? != sorted_means(&optimal)?)
}

/// Folds one iteration's observations into the bandit state.
///
/// `responses` is aligned with `superarm.members()`. When the superarm is
/// suboptimal, the suboptimal-pull counter of its least-employed member
/// (counted before this update, lowest index on ties) is incremented.
/// Returns whether the superarm was suboptimal.
pub fn record_outcome(
    state: &mut BanditState,
    superarm: &Superarm,
    responses: &[f64],
    pool: &WorkerPool,
) -> Result<bool> {
    if responses.len() != superarm.len() {
        return Err(Error::ResponseCountMismatch {
            expected: superarm.len(),
            got: responses.len(),
        });
    }
    if pool.len() != state.workers() {
        return Err(invalid("pool", "worker count differs from the bandit state"));
    }
    for &i in superarm.members() {
        state.check_worker(i)?;
    }
    let suboptimal = is_suboptimal(pool, superarm)?;
    if suboptimal {
        let least = superarm
            .members()
            .iter()
            .copied()
            .min_by_key(|&i| (state.pulls[i], i))
            .expect("superarm is non-empty");
        state.suboptimal_pulls[least] += 1;
    }
    for (&i, &response) in superarm.members().iter().zip(responses) {
        state.pulls[i] += 1;
        state.response_sums[i] += response;
    }
    state.iteration += 1;
    Ok(suboptimal)
}

/// One adaptive k-sync iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct KsyncStep {
    /// Time until the `k`-th response.
    pub time: f64,
    /// Workers occupied (and paid for) this iteration: always `n`.
    pub employments: usize,
    /// The `k` workers whose gradients are used.
    pub responsive: Superarm,
    /// Response times of `responsive`, aligned with its members.
    pub responses: Vec<f64>,
}

/// Tasks all `n` workers and waits for the `k` fastest.
///
/// Consumes `n` draws in worker index order.
pub fn adaptive_ksync_step<R: Rng + ?Sized>(pool: &WorkerPool, k: usize, rng: &mut R) -> Result<KsyncStep> {
    let fastest = pool.fastest_k(k, rng)?;
    let responses = fastest.responsive.members().iter().map(|&i| fastest.responses[i]).collect();
    Ok(KsyncStep {
        time: fastest.time,
        employments: pool.len(),
        responsive: fastest.responsive,
        responses,
    })
}

/// Switching points `T_1 < … < T_b` (with implicit `T_0 = 0`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    switching_points: Vec<u64>,
}

impl RoundSchedule {
    pub fn new(switching_points: Vec<u64>) -> Result<Self> {
        if switching_points.is_empty() {
            return Err(Error::InvalidSchedule("at least one round is required".into()));
        }
        let mut previous = 0;
        for &t in &switching_points {
            if t <= previous {
                return Err(Error::InvalidSchedule(format!(
                    "switching points must be strictly increasing and positive: {switching_points:?}"
                )));
            }
            previous = t;
        }
        Ok(Self { switching_points })
    }

    /// Rounds of equal length `len`.
    pub fn uniform(rounds: usize, len: u64) -> Result<Self> {
        Self::new((1..=rounds as u64).map(|r| r * len).collect())
    }

    pub fn switching_points(&self) -> &[u64] {
        &self.switching_points
    }

    /// The parallelism budget `b`, i.e. the number of rounds.
    pub fn rounds(&self) -> usize {
        self.switching_points.len()
    }

    /// `T_r` for `r ∈ [0, b]`.
    pub fn switching_point(&self, r: usize) -> u64 {
        if r == 0 {
            0
        } else {
            self.switching_points[r - 1]
        }
    }

    /// The last iteration `T_b`.
    pub fn horizon(&self) -> u64 {
        *self.switching_points.last().expect("non-empty")
    }

    /// The round `r` with `T_{r−1} < j ≤ T_r`.
    pub fn round_of(&self, j: u64) -> Option<usize> {
        if j == 0 || j > self.horizon() {
            return None;
        }
        Some(self.switching_points.partition_point(|&t| t < j) + 1)
    }

    /// `min{j, T_r} − T_{r−1}` when round `r` has started by `j`, else 0.
    pub fn iterations_in_round(&self, r: usize, j: u64) -> u64 {
        let start = self.switching_point(r - 1);
        if j > start {
            j.min(self.switching_point(r)) - start
        } else {
            0
        }
    }

    /// `B = Σ_r r·(T_r − T_{r−1})`, the total number of worker employments.
    pub fn budget(&self) -> u64 {
        (1..=self.rounds())
            .map(|r| r as u64 * (self.switching_point(r) - self.switching_point(r - 1)))
            .sum()
    }

    /// Employments made by the end of iteration `j`.
    pub fn employments_until(&self, j: u64) -> u64 {
        (1..=self.rounds())
            .map(|r| r as u64 * self.iterations_in_round(r, j))
            .sum()
    }
}

/// Switching points from the SGD convergence bound.
///
/// Round `r` waits for `r` workers, so its error floor is `ηLσ²/(2crs)`. The
/// round lasts the fewest iterations (at least one) after which the bound,
/// restarted from the value reached at the end of the previous round, is
/// within a factor `1 + θ` of that floor. Round 1 starts from the initial
/// gap. Switching points are capped so that `T_b ≤ j_cap` while every round
/// keeps at least one iteration.
pub fn compute_schedule(params: &BoundParams, rounds: usize, theta: f64, j_cap: u64) -> Result<RoundSchedule> {
    params.validate()?;
    if rounds == 0 {
        return Err(invalid("b", "at least one round is required"));
    }
    if !(theta > 0.0) {
        return Err(invalid("theta", "proximity factor must be positive"));
    }
    if j_cap < rounds as u64 {
        return Err(invalid("j_cap", "cap must leave at least one iteration per round"));
    }
    let decay = 1.0 - params.eta * params.convexity;
    let mut gap = params.initial_gap;
    let mut previous = 0u64;
    let mut points = Vec::with_capacity(rounds);
    for r in 1..=rounds {
        let floor = params.error_floor(r);
        let target = (1.0 + theta) * floor;
        let excess = gap - floor;
        let mut len = if excess <= theta * floor {
            1
        } else {
            let exact = (theta * floor / excess).ln() / decay.ln();
            (exact.ceil() as u64).max(1)
        };
        // guard the closed form against rounding at the boundary
        while len > 1 && transient_bound(params, floor, gap, len - 1) <= target {
            len -= 1;
        }
        while transient_bound(params, floor, gap, len) > target {
            len += 1;
        }
        let latest = j_cap - (rounds - r) as u64;
        let point = (previous + len).min(latest);
        gap = transient_bound(params, floor, gap, point - previous);
        points.push(point);
        previous = point;
    }
    RoundSchedule::new(points)
}
