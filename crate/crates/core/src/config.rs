//! Experiment configuration.
//!
//! Configs are flat `key = value` text files. Blank lines and `#` comments
//! are ignored. Command-line flags are applied afterwards through
//! [`ExperimentConfig::set`], so they override file values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::latency::WorkerPool;
use crate::policies::{Policy, RadiusVariant};

/// How switching points are obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    /// Computed from the convergence bound with proximity factor `theta`.
    Theta { theta: f64 },
    /// Read verbatim.
    List { points: Vec<u64> },
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("schedule `{s}` is not `theta:<x>` or `list:<T1>,<T2>,...`"));
        let (mode, value) = s.split_once(':').ok_or_else(bad)?;
        match mode.trim() {
            "theta" => Ok(ScheduleSpec::Theta {
                theta: value.trim().parse().map_err(|_| bad())?,
            }),
            "list" => Ok(ScheduleSpec::List {
                points: parse_list(value).map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleSpec::Theta { theta } => write!(f, "theta:{theta}"),
            ScheduleSpec::List { points } => {
                let joined: Vec<String> = points.iter().map(u64::to_string).collect();
                write!(f, "list:{}", joined.join(","))
            }
        }
    }
}

/// Grid the worker means are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSpec {
    pub low: f64,
    pub high: f64,
    pub step: f64,
    /// Draw without replacement.
    pub distinct: bool,
}

impl Default for MeanSpec {
    fn default() -> Self {
        Self {
            low: 0.1,
            high: 0.9,
            step: 0.1,
            distinct: false,
        }
    }
}

impl MeanSpec {
    pub fn grid(&self) -> Vec<f64> {
        let count = ((self.high - self.low) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| round_to_grid(self.low + i as f64 * self.step))
            .collect()
    }

    pub fn validate(&self, workers: usize) -> Result<()> {
        if !(self.low > 0.0 && self.high >= self.low && self.step > 0.0) {
            return Err(Error::Config(format!(
                "mean grid needs 0 < mean_low <= mean_high and mean_step > 0, got {}..{} step {}",
                self.low, self.high, self.step
            )));
        }
        if self.distinct && self.grid().len() < workers {
            return Err(Error::Config(format!(
                "distinct means need at least {workers} grid values, the grid has {}; lower mean_step",
                self.grid().len()
            )));
        }
        Ok(())
    }

    /// Draws one mean per worker.
    pub fn sample<R: Rng + ?Sized>(&self, workers: usize, rng: &mut R) -> Result<WorkerPool> {
        self.validate(workers)?;
        let grid = self.grid();
        let means: Vec<f64> = if self.distinct {
            sample(rng, grid.len(), workers).into_iter().map(|i| grid[i]).collect()
        } else {
            (0..workers).map(|_| grid[rng.random_range(0..grid.len())]).collect()
        };
        WorkerPool::from_means(&means)
    }
}

fn round_to_grid(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Workers `n`.
    pub workers: usize,
    /// Budget per iteration `b`, which is also the number of rounds.
    pub rounds: usize,
    /// Samples `m`.
    pub samples: usize,
    /// Features `d`.
    pub dim: usize,
    pub eta: f64,
    pub seeds: Vec<u64>,
    pub policies: Vec<Policy>,
    /// Radius variant used when a policy is given as plain `cmab`.
    pub variant: RadiusVariant,
    pub schedule: ScheduleSpec,
    /// Upper limit on `T_b`.
    pub j_cap: u64,
    pub means: MeanSpec,
    /// Fixes the worker pool and data set across run seeds. Without it every
    /// seed draws its own environment.
    pub environment_seed: Option<u64>,
    /// Run SGD updates. When off only timing and bandit statistics are kept.
    pub train: bool,
    /// Write every `stride`-th iteration to the figure tables.
    pub stride: u64,
    /// Monte Carlo draws per check in `verify`.
    pub mc_samples: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            workers: 50,
            rounds: 20,
            samples: 2000,
            dim: 100,
            eta: 1e-4,
            seeds: (0..10).collect(),
            policies: vec![Policy::CmabPlain, Policy::Optimal, Policy::AdaptiveKsync],
            variant: RadiusVariant::Plain,
            schedule: ScheduleSpec::Theta { theta: 0.1 },
            j_cap: 1_000_000,
            means: MeanSpec::default(),
            environment_seed: None,
            train: true,
            stride: 1,
            mc_samples: 1_000_000,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" | "workers" => self.workers = parse_value(key, value)?,
            "b" | "budget" | "rounds" => self.rounds = parse_value(key, value)?,
            "m" | "samples" => self.samples = parse_value(key, value)?,
            "d" | "dim" => self.dim = parse_value(key, value)?,
            "eta" => self.eta = parse_value(key, value)?,
            "seeds" | "seed" => self.seeds = parse_seeds(value)?,
            "policies" | "policy" => {
                self.policies = value
                    .split(',')
                    .map(|p| self.parse_policy(p.trim()))
                    .collect::<Result<_>>()?
            }
            "variant" => {
                let variant: RadiusVariant = value.parse()?;
                for p in &mut self.policies {
                    if p.variant() == Some(self.variant) {
                        *p = Policy::cmab(variant);
                    }
                }
                self.variant = variant;
            }
            "schedule" => self.schedule = value.parse()?,
            "j_cap" => self.j_cap = parse_value(key, value)?,
            "mean_low" => self.means.low = parse_value(key, value)?,
            "mean_high" => self.means.high = parse_value(key, value)?,
            "mean_step" => self.means.step = parse_value(key, value)?,
            "distinct_means" => self.means.distinct = parse_value(key, value)?,
            "environment_seed" => {
                self.environment_seed = match value {
                    "" | "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "train" => self.train = parse_value(key, value)?,
            "stride" => self.stride = parse_value(key, value)?,
            "mc_samples" => self.mc_samples = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn parse_policy(&self, name: &str) -> Result<Policy> {
        if name == "cmab" {
            Ok(Policy::cmab(self.variant))
        } else {
            name.parse()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.workers == 0 || self.rounds == 0 {
            return fail("n and b must be at least 1".into());
        }
        if self.rounds > self.workers {
            return fail(format!("b = {} exceeds n = {}", self.rounds, self.workers));
        }
        if self.samples == 0 || self.dim == 0 {
            return fail("m and d must be at least 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        if self.policies.is_empty() {
            return fail("policy list is empty".into());
        }
        if self.stride == 0 {
            return fail("stride must be at least 1".into());
        }
        match &self.schedule {
            ScheduleSpec::Theta { theta } if !(*theta > 0.0) => {
                return fail(format!("theta must be positive, got {theta}"));
            }
            ScheduleSpec::List { points } if points.len() != self.rounds => {
                return fail(format!(
                    "schedule lists {} switching points but b = {}",
                    points.len(),
                    self.rounds
                ));
            }
            _ => {}
        }
        self.means.validate(self.workers)
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list(value: &str) -> std::result::Result<Vec<u64>, std::num::ParseIntError> {
    value.split(',').map(|v| v.trim().parse()).collect()
}

/// `a..b` (exclusive), or a comma-separated list.
fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seed list `{value}`"));
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..hi).collect());
    }
    parse_list(value).map_err(|_| bad())
}
