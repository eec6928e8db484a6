//! Monte Carlo checks of the closed forms.

use rand::Rng;
use serde::Serialize;

use crate::analysis::{
    compute_gaps, empirical_mean_tail_params, subgamma_tail, subgaussian_tail, theorem1_bound, theorem2_bound,
};
use crate::error::Result;
use crate::harness::{run_in, Environment};
use crate::latency::{expected_max, WorkerPool};
use crate::policies::{Policy, RoundSchedule};
use crate::rng::{stream_rng, SimRng, Stream};

/// Mean and standard error of `samples` draws of the maximum of one
/// exponential per rate.
pub fn monte_carlo_max(rates: &[f64], samples: usize, rng: &mut SimRng) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let z = rates
            .iter()
            .map(|&rate| -(1.0 - rng.random::<f64>()).ln() / rate)
            .fold(0.0, f64::max);
        sum += z;
        sum_sq += z * z;
    }
    let k = samples as f64;
    let mean = sum / k;
    let var = (sum_sq - k * mean * mean) / (k - 1.0);
    (mean, (var.max(0.0) / k).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedMaxCheck {
    pub rates: Vec<f64>,
    pub exact: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub within: bool,
}

/// Random rate lists of length `1..=max_len` with rates in `[lo, hi]`.
pub fn check_expected_max(
    lists: usize,
    max_len: usize,
    (lo, hi): (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<Vec<ExpectedMaxCheck>> {
    let mut list_rng = stream_rng(seed, Stream::MeanAssignment);
    let mut draw_rng = stream_rng(seed, Stream::WorkerLatency);
    (0..lists)
        .map(|_| {
            let len = list_rng.random_range(1..=max_len);
            let rates: Vec<f64> = (0..len).map(|_| list_rng.random_range(lo..=hi)).collect();
            let exact = expected_max(&rates)?;
            let (estimate, standard_error) = monte_carlo_max(&rates, samples, &mut draw_rng);
            Ok(ExpectedMaxCheck {
                within: (estimate - exact).abs() <= 3.0 * standard_error,
                rates,
                exact,
                estimate,
                standard_error,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TailCheck {
    pub epsilon: f64,
    pub samples: u64,
    pub rate: f64,
    pub right_frequency: f64,
    pub right_bound: f64,
    pub left_frequency: f64,
    pub left_bound: f64,
    pub holds: bool,
}

/// Right and left tails of the centered mean of `T` exponential draws.
///
/// The left tail is checked at deviation `ε·σ`, so `ε` plays the same role
/// in both bounds.
pub fn check_tails(
    epsilons: &[f64],
    sample_counts: &[u64],
    rates: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<TailCheck>> {
    let mut rng = stream_rng(seed, Stream::WorkerLatency);
    let mut checks = Vec::new();
    for &t in sample_counts {
        for &rate in rates {
            let deviations: Vec<f64> = (0..trials)
                .map(|_| {
                    let s: f64 = (0..t).map(|_| -(1.0 - rng.random::<f64>()).ln() / rate).sum();
                    s / t as f64 - 1.0 / rate
                })
                .collect();
            let (sigma2, scale) = empirical_mean_tail_params(t, rate);
            for &epsilon in epsilons {
                let (threshold, right_bound) = subgamma_tail(epsilon, sigma2, scale)?;
                let left_dev = epsilon * sigma2.sqrt();
                let left_bound = subgaussian_tail(left_dev, sigma2)?;
                let freq = |pred: &dyn Fn(f64) -> bool| {
                    deviations.iter().filter(|&&z| pred(z)).count() as f64 / trials as f64
                };
                let right_frequency = freq(&|z| z > threshold);
                let left_frequency = freq(&|z| z <= -left_dev);
                let se = |p: f64| (p * (1.0 - p) / trials as f64).sqrt();
                checks.push(TailCheck {
                    epsilon,
                    samples: t,
                    rate,
                    right_frequency,
                    right_bound,
                    left_frequency,
                    left_bound,
                    holds: right_frequency <= right_bound + 3.0 * se(right_bound)
                        && left_frequency <= left_bound + 3.0 * se(left_bound),
                });
            }
        }
    }
    Ok(checks)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageCheck {
    pub epsilon: f64,
    pub iteration: u64,
    pub time_bound: f64,
    pub probability: f64,
    pub frequency: f64,
    pub holds: bool,
}

/// Fraction of bandit runs reaching iteration `j` within the run-time bound.
pub fn check_time_coverage(
    env: &Environment,
    schedule: &RoundSchedule,
    epsilons: &[f64],
    iterations: &[u64],
    seeds: std::ops::Range<u64>,
) -> Result<Vec<CoverageCheck>> {
    let gaps = compute_gaps(&env.pool, schedule)?;
    let runs = seeds
        .map(|seed| run_in(env, schedule, Policy::CmabPlain, seed, false))
        .collect::<Result<Vec<_>>>()?;
    let k = runs.len() as f64;
    let mut checks = Vec::new();
    for &epsilon in epsilons {
        for &j in iterations {
            let regret = theorem1_bound(&env.pool, schedule, &gaps, j, Default::default())?;
            let bound = theorem2_bound(schedule, &gaps, j, regret, epsilon)?;
            let hits = runs
                .iter()
                .filter(|t| t.rows[j as usize - 1].cum_time <= bound.time)
                .count();
            let frequency = hits as f64 / k;
            let p = bound.probability;
            let se = (p * (1.0 - p) / k).sqrt();
            checks.push(CoverageCheck {
                epsilon,
                iteration: j,
                time_bound: bound.time,
                probability: p,
                frequency,
                holds: frequency >= p - 3.0 * se,
            });
        }
    }
    Ok(checks)
}

#[derive(Debug, Clone, Serialize)]
pub struct GapCheck {
    pub round: usize,
    pub exact: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub within: bool,
}

/// Superarm gaps against paired simulation of the worst and optimal superarms.
pub fn check_gaps(pool: &WorkerPool, rounds: usize, samples: usize, seed: u64) -> Result<Vec<GapCheck>> {
    let gaps = compute_gaps(pool, &RoundSchedule::uniform(rounds, 1)?)?;
    let mut rng = stream_rng(seed, Stream::WorkerLatency);
    gaps.rounds
        .iter()
        .map(|g| {
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..samples {
                let d = pool.superarm_response(&g.worst, &mut rng)? - pool.superarm_response(&g.optimal, &mut rng)?;
                sum += d;
                sum_sq += d * d;
            }
            let k = samples as f64;
            let estimate = sum / k;
            let standard_error = ((sum_sq - k * estimate * estimate) / (k - 1.0) / k).max(0.0).sqrt();
            Ok(GapCheck {
                round: g.round,
                exact: g.max_gap,
                estimate,
                standard_error,
                within: (estimate - g.max_gap).abs() <= 3.0 * standard_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monte_carlo_max_of_two_unit_rates() {
        let (mean, se) = monte_carlo_max(&[1.0, 1.0], 200_000, &mut stream_rng(0, Stream::WorkerLatency));
        assert!((mean - 1.5).abs() < 4.0 * se);
    }

    #[test]
    fn small_suites_pass() {
        let checks = check_expected_max(5, 4, (0.5, 10.0), 100_000, 1).unwrap();
        assert!(checks.iter().filter(|c| c.within).count() >= 4);
        let tails = check_tails(&[1.0], &[4], &[1.0], 20_000, 2).unwrap();
        assert!(tails.iter().all(|c| c.holds));
        let pool = WorkerPool::from_means(&[0.2, 0.5, 0.9]).unwrap();
        let gaps = check_gaps(&pool, 2, 100_000, 3).unwrap();
        assert_eq!(gaps.len(), 2);
    }
}
