//! Browser bindings for the simulator. Every export takes plain numbers or
//! comma-separated lists and returns a JSON string for `www/index.html`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use cmab_sgd::analysis::{compute_gaps, empirical_regret, mean_curve, theorem1_bound, RegretBoundOptions};
use cmab_sgd::harness::{run_in, Environment};
use cmab_sgd::rng::{stream_rng, Stream};
use cmab_sgd::verify::monte_carlo_max;
use cmab_sgd::{
    compute_schedule, convergence_bound, expected_max, variance_of_max, BoundParams, Error, ExperimentConfig, Policy,
    RadiusVariant, Result, RoundSchedule, WorkerPool,
};

/// Points kept per plotted curve.
const MAX_POINTS: usize = 400;

fn parse_means(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("`{}` is not a number", s.trim())))
        })
        .collect()
}

fn thin(len: usize) -> impl Iterator<Item = usize> {
    let step = len.div_ceil(MAX_POINTS).max(1);
    (0..len).filter(move |i| i % step == 0 || i + 1 == len)
}

fn to_js(result: Result<Value>) -> std::result::Result<String, JsValue> {
    result
        .map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Exact and simulated mean of the slowest of a set of workers.
pub fn max_explorer(means: &str, draws: u32, seed: u64) -> Result<Value> {
    let pool = WorkerPool::from_means(&parse_means(means)?)?;
    let rates = pool.rates().to_vec();
    let exact = expected_max(&rates)?;
    let (estimate, standard_error) = monte_carlo_max(&rates, draws.max(2) as usize, &mut stream_rng(seed, Stream::WorkerLatency));
    let prefix: Vec<f64> = (1..=rates.len())
        .map(|k| expected_max(&rates[..k]))
        .collect::<Result<_>>()?;
    Ok(json!({
        "exact": exact,
        "variance": variance_of_max(&rates)?,
        "estimate": estimate,
        "standard_error": standard_error,
        "prefix_means": prefix,
    }))
}

/// Switching points from the convergence bound and the bound per round size.
pub fn schedule_curves(
    eta: f64,
    convexity: f64,
    lipschitz: f64,
    sigma2: f64,
    initial_gap: f64,
    batch: f64,
    rounds: usize,
    theta: f64,
) -> Result<Value> {
    let params = BoundParams::new(lipschitz, convexity, sigma2, initial_gap, batch, eta)?;
    let schedule = compute_schedule(&params, rounds, theta, 100_000_000)?;
    let horizon = schedule.horizon() as usize;
    let iterations: Vec<usize> = thin(horizon + 1).collect();
    let curves = (1..=rounds)
        .map(|k| {
            iterations
                .iter()
                .map(|&j| convergence_bound(&params, k, j as u64))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let floors: Vec<f64> = (1..=rounds).map(|k| params.error_floor(k)).collect();
    Ok(json!({
        "switching_points": schedule.switching_points(),
        "iterations": iterations,
        "bounds": curves,
        "floors": floors,
    }))
}

/// Mean simulated regret of the bandit next to its regret bound.
pub fn regret_simulation(means: &str, rounds: usize, round_len: u64, runs: u32, variant: &str, seed: u64) -> Result<Value> {
    let pool = WorkerPool::from_means(&parse_means(means)?)?;
    let variant: RadiusVariant = variant.parse()?;
    let schedule = RoundSchedule::uniform(rounds, round_len.max(1))?;
    let mut config = ExperimentConfig::default();
    config.workers = pool.len();
    config.rounds = rounds;
    config.samples = rounds.max(2);
    config.dim = 1;
    config.train = false;
    let env = Environment::with_pool(&config, seed, pool)?;
    let gaps = compute_gaps(&env.pool, &schedule)?;
    let mut counts = vec![0u64; env.pool.len()];
    let curves = (0..runs.max(1) as u64)
        .map(|run| {
            let trace = run_in(&env, &schedule, Policy::cmab(variant), seed.wrapping_add(run), false)?;
            for (c, e) in counts.iter_mut().zip(&trace.employment_counts) {
                *c += e;
            }
            empirical_regret(&trace, &gaps)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_curve(&curves)?;
    let iterations: Vec<usize> = thin(mean.len()).map(|i| i + 1).collect();
    let regret: Vec<f64> = iterations.iter().map(|&j| mean[j - 1]).collect();
    let bound: Option<Vec<f64>> = iterations
        .iter()
        .map(|&j| theorem1_bound(&env.pool, &schedule, &gaps, j as u64, RegretBoundOptions::default()).ok())
        .collect();
    Ok(json!({
        "iterations": iterations,
        "regret": regret,
        "bound": bound,
        "switching_points": schedule.switching_points(),
        "employments": counts,
        "means": env.pool.means(),
    }))
}

#[wasm_bindgen(js_name = maxExplorer)]
pub fn max_explorer_js(means: &str, draws: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(max_explorer(means, draws, seed as u64))
}

#[wasm_bindgen(js_name = scheduleCurves)]
#[allow(clippy::too_many_arguments)]
pub fn schedule_curves_js(
    eta: f64,
    convexity: f64,
    lipschitz: f64,
    sigma2: f64,
    initial_gap: f64,
    batch: f64,
    rounds: u32,
    theta: f64,
) -> std::result::Result<String, JsValue> {
    to_js(schedule_curves(eta, convexity, lipschitz, sigma2, initial_gap, batch, rounds as usize, theta))
}

#[wasm_bindgen(js_name = regretSimulation)]
pub fn regret_simulation_js(
    means: &str,
    rounds: u32,
    round_len: u32,
    runs: u32,
    variant: &str,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(regret_simulation(means, rounds as usize, round_len as u64, runs, variant, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_explorer_reports_exact_and_simulated_means() {
        let v = max_explorer("1, 1", 200_000, 3).unwrap();
        assert!((v["exact"].as_f64().unwrap() - 1.5).abs() < 1e-12);
        let est = v["estimate"].as_f64().unwrap();
        assert!((est - 1.5).abs() < 4.0 * v["standard_error"].as_f64().unwrap());
        assert_eq!(v["prefix_means"].as_array().unwrap().len(), 2);
        assert!(max_explorer("0.5, x", 10, 0).is_err());
        assert!(max_explorer("", 10, 0).is_err());
    }

    #[test]
    fn schedule_curves_follow_the_schedule() {
        let v = schedule_curves(0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1, 0.1).unwrap();
        assert_eq!(v["switching_points"], json!([50]));
        let bounds = v["bounds"][0].as_array().unwrap();
        assert_eq!(bounds[0].as_f64().unwrap(), 1.0);
        assert!(schedule_curves(20.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1, 0.1).is_err());
    }

    #[test]
    fn regret_simulation_stays_below_the_bound() {
        let v = regret_simulation("0.2,0.5,0.9,0.4", 2, 150, 10, "plain", 1).unwrap();
        let regret = v["regret"].as_array().unwrap();
        let bound = v["bound"].as_array().unwrap();
        assert_eq!(regret.len(), bound.len());
        for (r, b) in regret.iter().zip(bound) {
            assert!(r.as_f64().unwrap() <= b.as_f64().unwrap());
        }
        let employed: u64 = v["employments"].as_array().unwrap().iter().map(|e| e.as_u64().unwrap()).sum();
        assert_eq!(employed, 10 * (150 + 300));
        assert!(regret_simulation("0.2,0.5", 3, 10, 1, "plain", 0).is_err());
        assert!(regret_simulation("0.2,0.5", 1, 10, 1, "wide", 0).is_err());
    }
}
