//! Worker response-time model.
//!
//! Each worker `i` answers after an exponentially distributed delay with rate
//! `λ_i` (mean `1/λ_i`). Responses are redrawn independently every iteration.
//! Sampling uses inverse-transform draws, so every response consumes exactly
//! one `f64` from the generator; the draw order is documented per method.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest set for which the moments of the maximum are computed exactly.
///
/// The inclusion-exclusion sum has `2^len - 1` terms.
pub const MAX_EXACT_WORKERS: usize = 25;

/// The ground-truth latency rates of the `n` workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerPool {
    rates: Vec<f64>,
}

impl WorkerPool {
    pub fn from_rates(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::EmptySuperarm);
        }
        validate_rates(&rates)?;
        Ok(Self { rates })
    }

    /// Builds a pool from mean response times (`λ_i = 1/μ_i`).
    pub fn from_means(means: &[f64]) -> Result<Self> {
        let rates = means.iter().map(|&m| 1.0 / m).collect();
        Self::from_rates(rates)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, worker: usize) -> Result<f64> {
        self.rates
            .get(worker)
            .copied()
            .ok_or(Error::WorkerOutOfRange {
                index: worker,
                workers: self.len(),
            })
    }

    pub fn mean(&self, worker: usize) -> Result<f64> {
        self.rate(worker).map(|r| 1.0 / r)
    }

    pub fn means(&self) -> Vec<f64> {
        self.rates.iter().map(|r| 1.0 / r).collect()
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when every rate is at least 1, the regime covered by the regret bound.
    pub fn is_theorem_valid(&self) -> bool {
        self.min_rate() >= 1.0
    }

    /// Worker indices ordered fastest (smallest mean) first, ties by index.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        // larger rate = smaller mean
        order.sort_by(|&a, &b| self.rates[b].total_cmp(&self.rates[a]).then(a.cmp(&b)));
        order
    }

    pub fn rates_of(&self, superarm: &Superarm) -> Vec<f64> {
        superarm.members().iter().map(|&i| self.rates[i]).collect()
    }

    /// One exponential draw for `worker`. Consumes one `f64`.
    pub fn sample_response<R: Rng + ?Sized>(&self, worker: usize, rng: &mut R) -> Result<f64> {
        let rate = self.rate(worker)?;
        Ok(draw_exponential(rate, rng))
    }

    /// One fresh draw per member, taken in ascending worker index order.
    ///
    /// The returned vector is aligned with `superarm.members()`.
    pub fn superarm_responses<R: Rng + ?Sized>(
        &self,
        superarm: &Superarm,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_superarm(superarm)?;
        Ok(superarm
            .members()
            .iter()
            .map(|&i| draw_exponential(self.rates[i], rng))
            .collect())
    }

    /// Time until the slowest member of `superarm` responds.
    ///
    /// Consumes exactly `superarm.len()` draws, in ascending index order.
    pub fn superarm_response<R: Rng + ?Sized>(&self, superarm: &Superarm, rng: &mut R) -> Result<f64> {
        let responses = self.superarm_responses(superarm, rng)?;
        Ok(responses.into_iter().fold(0.0, f64::max))
    }

    /// Draws all `n` workers (index order) and returns the `k`-th smallest.
    pub fn kth_order_response<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<f64> {
        Ok(self.fastest_k(k, rng)?.time)
    }

    /// Draws all `n` workers in index order and keeps the `k` fastest.
    ///
    /// Equal response times are ordered by worker index.
    pub fn fastest_k<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<FastestK> {
        let n = self.len();
        if k == 0 || k > n {
            return Err(Error::OrderOutOfRange { k, workers: n });
        }
        let responses: Vec<f64> = self
            .rates
            .iter()
            .map(|&rate| draw_exponential(rate, rng))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| responses[a].total_cmp(&responses[b]).then(a.cmp(&b)));
        let time = responses[order[k - 1]];
        order.truncate(k);
        let responsive = Superarm::new(order)?;
        Ok(FastestK {
            time,
            responsive,
            responses,
        })
    }

    fn check_superarm(&self, superarm: &Superarm) -> Result<()> {
        match superarm.members().last() {
            Some(&last) if last >= self.len() => Err(Error::WorkerOutOfRange {
                index: last,
                workers: self.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Outcome of waiting for the `k` fastest out of all workers.
#[derive(Debug, Clone, PartialEq)]
pub struct FastestK {
    /// The `k`-th smallest response time.
    pub time: f64,
    pub responsive: Superarm,
    /// Every worker's draw, indexed by worker.
    pub responses: Vec<f64>,
}

/// A non-empty set of distinct worker indices, kept in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Superarm(Vec<usize>);

impl Superarm {
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptySuperarm);
        }
        members.sort_unstable();
        if let Some(w) = members.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateWorker(w[0]));
        }
        Ok(Self(members))
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, worker: usize) -> bool {
        self.0.binary_search(&worker).is_ok()
    }
}

impl std::fmt::Display for Superarm {
    /// `i1|i2|...`, ascending.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (pos, i) in self.0.iter().enumerate() {
            if pos > 0 {
                f.write_str("|")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

fn draw_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

fn validate_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        Some(&bad) => Err(Error::InvalidRate(bad)),
        None => Ok(()),
    }
}

fn validate_moment_input(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::EmptySuperarm);
    }
    if rates.len() > MAX_EXACT_WORKERS {
        return Err(Error::TooManyWorkers {
            len: rates.len(),
            cap: MAX_EXACT_WORKERS,
        });
    }
    validate_rates(rates)
}

/// Subset sums of `rates`, indexed by bitmask.
fn subset_sums(rates: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; 1 << rates.len()];
    for mask in 1..sums.len() {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + rates[low];
    }
    sums
}

/// `Σ_{S ≠ ∅} (-1)^{|S|-1} term(Σ_{ξ∈S} λ_ξ)` over the power set of `rates`.
///
/// Subsets are enumerated by binary counting over two half-tables of subset
/// sums; the alternating series is accumulated with Neumaier compensation.
fn alternating_subset_sum(rates: &[f64], term: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = rates.split_at(rates.len() / 2);
    let lo_sums = subset_sums(lo);
    let hi_sums = subset_sums(hi);
    let mut acc = 0.0f64;
    let mut carry = 0.0f64;
    for (h, &hs) in hi_sums.iter().enumerate() {
        let hi_bits = h.count_ones();
        for (l, &ls) in lo_sums.iter().enumerate() {
            let size = hi_bits + l.count_ones();
            if size == 0 {
                continue;
            }
            let value = term(hs + ls);
            let value = if size % 2 == 1 { value } else { -value };
            let t = acc + value;
            if acc.abs() >= value.abs() {
                carry += (acc - t) + value;
            } else {
                carry += (value - t) + acc;
            }
            acc = t;
        }
    }
    acc + carry
}

/// Mean of the maximum of independent exponentials with the given rates.
pub fn expected_max(rates: &[f64]) -> Result<f64> {
    validate_moment_input(rates)?;
    Ok(alternating_subset_sum(rates, |lambda| 1.0 / lambda))
}

/// Second raw moment of the maximum, `E[max²]`.
pub fn second_moment_of_max(rates: &[f64]) -> Result<f64> {
    validate_moment_input(rates)?;
    Ok(alternating_subset_sum(rates, |lambda| 2.0 / (lambda * lambda)))
}

/// Variance of the maximum of independent exponentials.
pub fn variance_of_max(rates: &[f64]) -> Result<f64> {
    let mean = expected_max(rates)?;
    let second = second_moment_of_max(rates)?;
    Ok((second - mean * mean).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Moments of the max from Simpson integration of its survival function.
    fn quadrature_moments(rates: &[f64]) -> (f64, f64) {
        let slowest = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = 60.0 / slowest;
        let steps = 400_000;
        let h = upper / steps as f64;
        let survival = |x: f64| 1.0 - rates.iter().map(|l| 1.0 - (-l * x).exp()).product::<f64>();
        // Simpson on E[X] = ∫ S(x) dx and E[X²] = ∫ 2x S(x) dx
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..=steps {
            let x = i as f64 * h;
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let s = survival(x);
            m1 += w * s;
            m2 += w * 2.0 * x * s;
        }
        (m1 * h / 3.0, m2 * h / 3.0)
    }

    #[test]
    fn single_rate_moments() {
        assert_relative_eq!(expected_max(&[4.0]).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(variance_of_max(&[4.0]).unwrap(), 1.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn hand_computed_pairs() {
        assert_relative_eq!(expected_max(&[1.0, 1.0]).unwrap(), 1.5, epsilon = 1e-15);
        assert_relative_eq!(
            expected_max(&[2.0, 4.0]).unwrap(),
            0.5 + 0.25 - 1.0 / 6.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(second_moment_of_max(&[1.0, 1.0]).unwrap(), 3.5, epsilon = 1e-15);
        assert_relative_eq!(variance_of_max(&[1.0, 1.0]).unwrap(), 1.25, epsilon = 1e-14);
    }

    #[test]
    fn iid_matches_harmonic_form_up_to_cap() {
        for r in [1usize, 2, 5, 13, 20, 25] {
            let lambda = 1.7;
            let harmonic: f64 = (1..=r).map(|q| 1.0 / q as f64).sum::<f64>() / lambda;
            let exact = expected_max(&vec![lambda; r]).unwrap();
            assert_relative_eq!(exact, harmonic, max_relative = 1e-9);
        }
    }

    #[test]
    fn iid_variance_matches_closed_form() {
        // Var(max of r iid exp(λ)) = Σ 1/(qλ)² (Rényi representation)
        for r in [1usize, 3, 8, 20] {
            let lambda = 2.5;
            let expected: f64 = (1..=r).map(|q| 1.0 / (q as f64 * lambda).powi(2)).sum();
            assert_relative_eq!(variance_of_max(&vec![lambda; r]).unwrap(), expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn matches_quadrature_on_heterogeneous_rates() {
        let rates = [1.0, 1.25, 2.0, 10.0 / 3.0, 5.0, 10.0, 1.1];
        let (m1, m2) = quadrature_moments(&rates);
        assert_relative_eq!(expected_max(&rates).unwrap(), m1, max_relative = 1e-8);
        assert_relative_eq!(
            variance_of_max(&rates).unwrap(),
            m2 - m1 * m1,
            max_relative = 1e-6
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(expected_max(&[]), Err(Error::EmptySuperarm));
        assert_eq!(expected_max(&[1.0, 0.0]), Err(Error::InvalidRate(0.0)));
        assert_eq!(variance_of_max(&[-1.0]), Err(Error::InvalidRate(-1.0)));
        let err = expected_max(&vec![1.0; 26]).unwrap_err();
        assert_eq!(err, Error::TooManyWorkers { len: 26, cap: 25 });
        assert!(err.to_string().contains("capped at 25"));
    }

    #[test]
    fn sampling_is_deterministic_and_positive() {
        let pool = WorkerPool::from_rates(vec![1.0]).unwrap();
        let a = pool.sample_response(0, &mut stream_rng(3, Stream::WorkerLatency)).unwrap();
        let b = pool.sample_response(0, &mut stream_rng(3, Stream::WorkerLatency)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0);
        assert_eq!(
            pool.sample_response(1, &mut stream_rng(3, Stream::WorkerLatency)),
            Err(Error::WorkerOutOfRange { index: 1, workers: 1 })
        );
    }

    #[test]
    fn empirical_mean_and_tail_of_single_worker() {
        let mut rng = stream_rng(11, Stream::WorkerLatency);
        let pool = WorkerPool::from_rates(vec![2.0, 10.0]).unwrap();
        let draws = 1_000_000;
        let mean = (0..draws).map(|_| pool.sample_response(0, &mut rng).unwrap()).sum::<f64>() / draws as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        let tail = (0..draws)
            .filter(|_| pool.sample_response(1, &mut rng).unwrap() > 0.1)
            .count() as f64
            / draws as f64;
        assert!((tail - (-1.0f64).exp()).abs() < 0.005, "tail {tail}");
    }

    #[test]
    fn singleton_superarm_equals_single_draw() {
        let pool = WorkerPool::from_rates(vec![1.0, 3.0, 0.5]).unwrap();
        let arm = Superarm::new(vec![1]).unwrap();
        let a = pool.superarm_response(&arm, &mut stream_rng(5, Stream::WorkerLatency)).unwrap();
        let b = pool.sample_response(1, &mut stream_rng(5, Stream::WorkerLatency)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn superarm_and_order_statistic_monte_carlo() {
        let trials = 1_000_000;
        let mut rng = stream_rng(21, Stream::WorkerLatency);

        let pool = WorkerPool::from_rates(vec![1.0, 1.0]).unwrap();
        let both = Superarm::new(vec![0, 1]).unwrap();
        let mean = (0..trials).map(|_| pool.superarm_response(&both, &mut rng).unwrap()).sum::<f64>() / trials as f64;
        assert!((mean - 1.5).abs() < 0.01, "max mean {mean}");
        let kth = (0..trials).map(|_| pool.kth_order_response(2, &mut rng).unwrap()).sum::<f64>() / trials as f64;
        assert!((kth - 1.5).abs() < 0.01, "k=2 mean {kth}");

        let pool = WorkerPool::from_rates(vec![2.0, 4.0]).unwrap();
        let mean = (0..trials).map(|_| pool.superarm_response(&both, &mut rng).unwrap()).sum::<f64>() / trials as f64;
        assert!((mean - 7.0 / 12.0).abs() < 0.005, "mean {mean}");

        let n = 5;
        let pool = WorkerPool::from_rates(vec![1.0; n]).unwrap();
        let min = (0..trials).map(|_| pool.kth_order_response(1, &mut rng).unwrap()).sum::<f64>() / trials as f64;
        assert!((min - 1.0 / n as f64).abs() < 0.01 / n as f64, "min mean {min}");
    }

    #[test]
    fn kth_order_extremes_and_errors() {
        let pool = WorkerPool::from_rates(vec![1.0, 2.0, 3.0]).unwrap();
        let all = Superarm::new(vec![0, 1, 2]).unwrap();
        let a = pool.kth_order_response(3, &mut stream_rng(9, Stream::WorkerLatency)).unwrap();
        let b = pool.superarm_response(&all, &mut stream_rng(9, Stream::WorkerLatency)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let mut rng = stream_rng(9, Stream::WorkerLatency);
        assert_eq!(pool.kth_order_response(0, &mut rng), Err(Error::OrderOutOfRange { k: 0, workers: 3 }));
        assert_eq!(pool.kth_order_response(4, &mut rng), Err(Error::OrderOutOfRange { k: 4, workers: 3 }));
    }

    #[test]
    fn superarm_validation() {
        assert_eq!(Superarm::new(vec![]), Err(Error::EmptySuperarm));
        assert_eq!(Superarm::new(vec![2, 1, 2]), Err(Error::DuplicateWorker(2)));
        let arm = Superarm::new(vec![4, 0, 2]).unwrap();
        assert_eq!(arm.to_string(), "0|2|4");
        let pool = WorkerPool::from_rates(vec![1.0; 3]).unwrap();
        assert_eq!(
            pool.superarm_response(&arm, &mut stream_rng(1, Stream::WorkerLatency)),
            Err(Error::WorkerOutOfRange { index: 4, workers: 3 })
        );
    }

    proptest! {
        #[test]
        fn adding_a_worker_never_lowers_the_expected_max(
            rates in prop::collection::vec(0.1f64..10.0, 1..10),
            extra in 0.1f64..10.0,
        ) {
            let base = expected_max(&rates).unwrap();
            let mut grown = rates.clone();
            grown.push(extra);
            prop_assert!(expected_max(&grown).unwrap() >= base * (1.0 - 1e-12));
        }

        #[test]
        fn variance_is_non_negative(rates in prop::collection::vec(0.1f64..10.0, 1..12)) {
            prop_assert!(variance_of_max(&rates).unwrap() >= 0.0);
        }
    }
}
