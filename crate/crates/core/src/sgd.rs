//! Synthetic least-squares problem and mini-batch SGD.
//!
//! The loss is `F(w) = ½‖Xw − y‖²`. Each employed worker returns the
//! unscaled partial gradient over a batch of `s = m/b` rows; the main node
//! averages the responsive workers' gradients per sample.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone)]
pub struct SgdProblem {
    /// Row-major `m × d`, zero-padded so that `b` divides `m`.
    features: Vec<f64>,
    labels: Vec<f64>,
    rows: usize,
    /// Rows before zero padding.
    data_rows: usize,
    dim: usize,
    weights: Vec<f64>,
    initial_weights: Vec<f64>,
    eta: f64,
    batch_size: usize,
    target: Vec<f64>,
}

impl SgdProblem {
    /// Samples the synthetic regression task.
    ///
    /// Draw order on `rng`: `X` row-major from U[1, 10], the generating model
    /// `w′` from U[1, 100]^d, one standard normal label noise per row, then
    /// `w0` from U[1, 100]^d.
    pub fn generate<R: Rng + ?Sized>(m: usize, d: usize, eta: f64, budget: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(invalid("m, d", "problem dimensions must be at least 1"));
        }
        let feature_dist = Uniform::new_inclusive(1.0, 10.0).expect("valid range");
        let weight_dist = Uniform::new_inclusive(1.0, 100.0).expect("valid range");
        let features: Vec<f64> = (0..m * d).map(|_| feature_dist.sample(rng)).collect();
        let generator: Vec<f64> = (0..d).map(|_| weight_dist.sample(rng)).collect();
        let labels: Vec<f64> = features
            .chunks_exact(d)
            .map(|row| {
                let noise: f64 = StandardNormal.sample(rng);
                dot(row, &generator) + noise
            })
            .collect();
        let initial: Vec<f64> = (0..d).map(|_| weight_dist.sample(rng)).collect();
        Self::from_parts(features, labels, d, initial, eta, budget)
    }

    /// Builds a problem from explicit data. Rows are zero-padded until
    /// `budget` divides the row count.
    pub fn from_parts(
        mut features: Vec<f64>,
        mut labels: Vec<f64>,
        dim: usize,
        initial_weights: Vec<f64>,
        eta: f64,
        budget: usize,
    ) -> Result<Self> {
        if dim == 0 || features.len() % dim != 0 || features.len() / dim != labels.len() || labels.is_empty() {
            return Err(invalid("features", "shape does not match labels and dimension"));
        }
        if initial_weights.len() != dim {
            return Err(invalid("initial_weights", "length must equal the dimension"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", "learning rate must be positive"));
        }
        if budget == 0 {
            return Err(invalid("b", "parallelism budget must be at least 1"));
        }
        let data_rows = labels.len();
        let rows = data_rows.div_ceil(budget) * budget;
        features.resize(rows * dim, 0.0);
        labels.resize(rows, 0.0);
        let target = solve_least_squares(&features, &labels, dim)?;
        Ok(Self {
            features,
            labels,
            rows,
            data_rows,
            dim,
            weights: initial_weights.clone(),
            initial_weights,
            eta,
            batch_size: rows / budget,
            target,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn data_rows(&self) -> usize {
        self.data_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.features[l * self.dim..(l + 1) * self.dim]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn initial_weights(&self) -> &[f64] {
        &self.initial_weights
    }

    pub fn least_squares_target(&self) -> &[f64] {
        &self.target
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.dim {
            return Err(invalid("weights", "length must equal the dimension"));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.weights.clone_from(&self.initial_weights);
    }

    /// `s` distinct row indices, uniformly without replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        rand::seq::index::sample(rng, self.rows, self.batch_size).into_vec()
    }

    /// `Σ_{l∈batch} x_l (x_lᵀw − y_l)` at the current model.
    pub fn partial_gradient(&self, batch: &[usize]) -> Vec<f64> {
        self.partial_gradient_at(&self.weights, batch)
    }

    pub fn partial_gradient_at(&self, weights: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim];
        for &l in batch {
            let row = self.row(l);
            let residual = dot(row, weights) - self.labels[l];
            for (g, x) in grad.iter_mut().zip(row) {
                *g += x * residual;
            }
        }
        grad
    }

    /// `w ← w − η/(|R|·s) Σ_{i∈R} g_i`, with `|R|` the number of gradients.
    pub fn apply_update(&mut self, gradients: &[Vec<f64>]) -> Result<()> {
        if gradients.is_empty() {
            return Err(Error::NoGradients);
        }
        let scale = self.eta / (gradients.len() * self.batch_size) as f64;
        for g in gradients {
            if g.len() != self.dim {
                return Err(invalid("gradients", "length must equal the dimension"));
            }
        }
        for (k, w) in self.weights.iter_mut().enumerate() {
            let total: f64 = gradients.iter().map(|g| g[k]).sum();
            *w -= scale * total;
        }
        Ok(())
    }

    /// `‖X⁺y − w‖₂`.
    pub fn model_error(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.target)
            .map(|(w, t)| (w - t) * (w - t))
            .sum::<f64>()
            .sqrt()
    }

    /// `½‖Xw − y‖²`.
    pub fn loss_at(&self, weights: &[f64]) -> f64 {
        (0..self.rows)
            .map(|l| {
                let r = dot(self.row(l), weights) - self.labels[l];
                0.5 * r * r
            })
            .sum()
    }

    /// Estimates the constants of the convergence bound for this problem.
    ///
    /// The bound is read on the per-sample average loss `F/m`, which is the
    /// objective the averaged update descends: `L` and `c` are the extreme
    /// eigenvalues of `XᵀX/m`, `σ²` is the mean squared per-sample gradient
    /// norm at the least-squares solution (where the full gradient vanishes,
    /// so it equals the per-sample gradient variance), and the initial gap is
    /// `(F(w0) − F*)/m`.
    pub fn estimate_bound_params(&self) -> Result<BoundParams> {
        let m = self.rows as f64;
        let gram = gram_matrix(&self.features, self.rows, self.dim) / m;
        let eigen = SymmetricEigen::new(gram);
        let lipschitz = eigen.eigenvalues.max();
        let convexity = eigen.eigenvalues.min();
        let sigma2 = (0..self.rows)
            .map(|l| {
                let g = self.partial_gradient_at(&self.target, &[l]);
                dot(&g, &g)
            })
            .sum::<f64>()
            / m;
        let initial_gap = (self.loss_at(&self.initial_weights) - self.loss_at(&self.target)) / m;
        BoundParams::new(lipschitz, convexity, sigma2, initial_gap, self.batch_size as f64, self.eta)
    }
}

/// Constants of the mini-batch SGD convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub lipschitz: f64,
    pub convexity: f64,
    pub sigma2: f64,
    pub initial_gap: f64,
    pub batch_size: f64,
    pub eta: f64,
}

impl BoundParams {
    pub fn new(
        lipschitz: f64,
        convexity: f64,
        sigma2: f64,
        initial_gap: f64,
        batch_size: f64,
        eta: f64,
    ) -> Result<Self> {
        let params = Self {
            lipschitz,
            convexity,
            sigma2,
            initial_gap,
            batch_size,
            eta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("L", self.lipschitz),
            ("c", self.convexity),
            ("sigma2", self.sigma2),
            ("initial_gap", self.initial_gap),
            ("s", self.batch_size),
            ("eta", self.eta),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(name, format!("must be positive and finite, got {value}")));
            }
        }
        let contraction = self.eta * self.convexity;
        if contraction >= 1.0 {
            return Err(Error::NonConvergent(contraction));
        }
        Ok(())
    }

    /// `ηLσ²/(2cks)`.
    pub fn error_floor(&self, k: usize) -> f64 {
        self.eta * self.lipschitz * self.sigma2 / (2.0 * self.convexity * k as f64 * self.batch_size)
    }
}

/// `ηLσ²/(2cks) + (1 − ηc)^j (F(w0) − F* − ηLσ²/(2cks))`.
pub fn convergence_bound(params: &BoundParams, k: usize, j: u64) -> Result<f64> {
    params.validate()?;
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    let floor = params.error_floor(k);
    Ok(transient_bound(params, floor, params.initial_gap, j))
}

/// The bound restarted from `start_gap` instead of the initial gap.
pub(crate) fn transient_bound(params: &BoundParams, floor: f64, start_gap: f64, j: u64) -> f64 {
    let decay = (1.0 - params.eta * params.convexity).powf(j as f64);
    decay * start_gap + (1.0 - decay) * floor
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gram_matrix(features: &[f64], rows: usize, dim: usize) -> DMatrix<f64> {
    let x = DMatrix::from_row_slice(rows, dim, features);
    x.transpose() * x
}

/// Solves the normal equations `XᵀX w = Xᵀy` by Cholesky factorization.
fn solve_least_squares(features: &[f64], labels: &[f64], dim: usize) -> Result<Vec<f64>> {
    let rows = labels.len();
    let x = DMatrix::from_row_slice(rows, dim, features);
    let xt = x.transpose();
    let gram = &xt * &x;
    let rhs = &xt * DVector::from_column_slice(labels);
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    let solution = chol.solve(&rhs);
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    // The factorization succeeds on numerically singular Gram matrices too.
    let residual = (&xt * (&x * &solution - DVector::from_column_slice(labels))).norm();
    if residual > 1e-6 * rhs.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient);
    }
    Ok(solution.iter().copied().collect())
}
