//! Aggregators: equal average, median, simplex-weighted average and the
//! linearly extremized weighted average.
//!
//! The extremized aggregate for problem `k` is
//!
//! ```text
//!     X*_k = alpha * (w'X_k - mu0) + mu0
//! ```
//!
//! Fitting it by least squares over `(alpha, w, mu0)` with `w` on the simplex
//! and `alpha >= 0` is equivalent to a non-negative least-squares problem in
//! `beta = (mu0 * (1 - alpha), alpha * w_1, ..., alpha * w_N)` with a free
//! intercept, which is solved with [`crate::qp`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ForecastPanel;
use crate::qp::{self, QpOptions, QpProblem, QpSolution};

const SIMPLEX_TOLERANCE: f64 = 1e-9;
const BETA_CLAMP: f64 = 1e-9;
const ALPHA_DEGENERATE: f64 = 1e-12;
const ALPHA_UNIT: f64 = 1e-8;

/// Weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if let Some((j, w)) = weights.iter().enumerate().find(|(_, w)| w.is_nan() || **w < -1e-12) {
            return Err(Error::InvalidWeights(format!("w[{j}] = {w} is negative")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {total}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// All weight on forecaster `m`.
    pub fn unit(n: usize, m: usize) -> Self {
        let mut w = vec![0.0; n];
        w[m] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Column means of the forecast matrix.
pub fn equal_average(p: &ForecastPanel) -> Vec<f64> {
    let n = p.n_forecasters() as f64;
    p.forecasts().row_sum().iter().map(|s| s / n).collect()
}

/// Per-problem median; even panels take the midpoint of the two central values.
pub fn median_aggregate(p: &ForecastPanel) -> Vec<f64> {
    let n = p.n_forecasters();
    let mid = n / 2;
    p.forecasts()
        .column_iter()
        .map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
            let upper = *upper;
            if n % 2 == 1 {
                upper
            } else {
                let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                0.5 * (lower + upper)
            }
        })
        .collect()
}

/// `w'X_k` for every problem.
pub fn apply_weights(w: &WeightVector, p: &ForecastPanel) -> Result<Vec<f64>> {
    if w.len() != p.n_forecasters() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} forecasters",
            w.len(),
            p.n_forecasters()
        )));
    }
    let w = DVector::from_column_slice(w.as_slice());
    Ok(p.forecasts().tr_mul(&w).iter().copied().collect())
}

/// Simplex-constrained least squares over the average quadratic loss:
/// `q = 2 X X' / K`, `c = -2 X Y / K`.
pub fn weighted_average_problem(train: &ForecastPanel) -> Result<QpProblem> {
    let n = train.n_forecasters();
    let k = train.n_problems() as f64;
    let x = train.forecasts();
    let y = DVector::from_column_slice(train.outcomes());
    let q = (x * x.transpose()) * (2.0 / k);
    let c = (x * y) * (-2.0 / k);
    QpProblem::new(symmetrize(q), c)
        .and_then(|p| p.with_nonneg(0..n))
        .and_then(|p| p.with_sum_constraint((0..n).collect(), 1.0))
        .map_err(|e| Error::InvalidPanel(e.to_string()))
}

/// Weights minimizing the training quadratic loss over the simplex.
pub fn fit_weighted_average(train: &ForecastPanel) -> Result<WeightVector> {
    if train.n_problems() < 2 {
        return Err(Error::TooFewPoints { required: 2, got: train.n_problems() });
    }
    let problem = weighted_average_problem(train)?;
    let sol = solve_or_fail(problem, "weighted average")?;
    let mut w: Vec<f64> = sol.beta.iter().map(|&b| b.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    WeightVector::new(w)
}

/// Parameters recovered from a raw solution vector `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredParameters {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub mu0: f64,
    /// False when `alpha` is numerically one and `mu0` has no effect.
    pub mu0_defined: bool,
    /// False when `alpha` is numerically zero and any weights give the same forecast.
    pub weights_defined: bool,
}

/// Maps `beta = (beta_0, beta_1, ..., beta_N)` back to `(alpha, w, mu0)`.
///
/// Entries of `beta_{1..N}` within `1e-9` below zero are treated as zero.
pub fn recover_parameters(beta: &[f64]) -> Result<RecoveredParameters> {
    if beta.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "beta needs an intercept and at least one slope, got {} entries",
            beta.len()
        )));
    }
    let mut slopes = beta[1..].to_vec();
    for (j, b) in slopes.iter_mut().enumerate() {
        if *b < -BETA_CLAMP || !b.is_finite() {
            return Err(Error::NegativeBeta { index: j + 1, value: *b });
        }
        *b = b.max(0.0);
    }
    let n = slopes.len();
    let alpha: f64 = slopes.iter().sum();
    let (weights, weights_defined) = if alpha > ALPHA_DEGENERATE {
        (slopes.iter().map(|b| b / alpha).collect(), true)
    } else {
        (vec![1.0 / n as f64; n], false)
    };
    // beta_0 = mu0 * (1 - alpha), so the fitted values beta_0 + beta'X equal X*.
    let (mu0, mu0_defined) = if (1.0 - alpha).abs() > ALPHA_UNIT {
        (beta[0] / (1.0 - alpha), true)
    } else {
        (0.0, false)
    };
    Ok(RecoveredParameters {
        alpha,
        weights,
        mu0,
        mu0_defined,
        weights_defined,
    })
}

/// Inverse of [`recover_parameters`].
pub fn parameters_to_beta(alpha: f64, weights: &[f64], mu0: f64) -> Vec<f64> {
    std::iter::once(mu0 * (1.0 - alpha))
        .chain(weights.iter().map(|w| alpha * w))
        .collect()
}

/// A fitted extremized weighted average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremizedAggregator {
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub mu0: f64,
    pub beta_raw: Vec<f64>,
    pub mu0_defined: bool,
    pub weights_defined: bool,
    pub training_loss: f64,
    pub kkt_residual: f64,
    pub ridge: Option<f64>,
}

/// On-disk form: `{"alpha", "weights", "mu0", "mu0_defined"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorRecord {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub mu0: f64,
    pub mu0_defined: bool,
}

impl ExtremizedAggregator {
    pub fn from_parameters(alpha: f64, weights: Vec<f64>, mu0: f64) -> Result<Self> {
        if alpha.is_nan() || alpha < -1e-12 {
            return Err(Error::InvalidWeights(format!("alpha = {alpha} is negative")));
        }
        let mu0_defined = (1.0 - alpha).abs() > ALPHA_UNIT;
        let weights = if alpha > ALPHA_DEGENERATE {
            WeightVector::new(weights)?.into()
        } else {
            weights
        };
        let mu0 = if mu0_defined { mu0 } else { 0.0 };
        Ok(Self {
            beta_raw: parameters_to_beta(alpha, &weights, mu0),
            weights_defined: alpha > ALPHA_DEGENERATE,
            weights,
            alpha,
            mu0,
            mu0_defined,
            training_loss: f64::NAN,
            kkt_residual: f64::NAN,
            ridge: None,
        })
    }

    pub fn record(&self) -> AggregatorRecord {
        AggregatorRecord {
            alpha: self.alpha,
            weights: self.weights.clone(),
            mu0: self.mu0,
            mu0_defined: self.mu0_defined,
        }
    }

    pub fn from_record(r: AggregatorRecord) -> Result<Self> {
        Self::from_parameters(r.alpha, r.weights, r.mu0)
    }

    pub fn n_forecasters(&self) -> usize {
        self.weights.len()
    }
}

/// Builds the non-negative least-squares problem over the design `(1, X')`
/// with the average quadratic loss: `q = D'D / K`, `c = -D'Y / K`, and
/// `beta_1..beta_N >= 0`.
pub fn extremized_problem(train: &ForecastPanel) -> Result<QpProblem> {
    let n = train.n_forecasters();
    let k = train.n_problems();
    let design = design_matrix(train);
    let y = DVector::from_column_slice(train.outcomes());
    let scale = 1.0 / k as f64;
    let q = design.tr_mul(&design) * scale;
    let c = design.tr_mul(&y) * (-scale);
    QpProblem::new(symmetrize(q), c)
        .and_then(|p| p.with_nonneg(1..=n))
        .map_err(|e| Error::InvalidPanel(e.to_string()))
}

/// Fits `alpha`, `w` and `mu0` by minimizing the training quadratic loss.
pub fn fit_extremized(train: &ForecastPanel) -> Result<ExtremizedAggregator> {
    if train.n_problems() < 2 {
        return Err(Error::TooFewPoints { required: 2, got: train.n_problems() });
    }
    let varies = train
        .forecasts()
        .row_iter()
        .any(|row| row.iter().any(|&v| v != row[0]));
    if !varies {
        return Err(Error::DegenerateDesign);
    }
    let problem = extremized_problem(train)?;
    let sol = solve_or_fail(problem, "extremized aggregator")?;
    let beta: Vec<f64> = sol.beta.iter().copied().collect();
    let rec = recover_parameters(&beta)?;
    let fitted = design_matrix(train) * &sol.beta;
    let training_loss = fitted
        .iter()
        .zip(train.outcomes())
        .map(|(f, y)| (f - y).powi(2))
        .sum::<f64>()
        / train.n_problems() as f64;
    Ok(ExtremizedAggregator {
        weights: rec.weights,
        alpha: rec.alpha,
        mu0: rec.mu0,
        beta_raw: beta,
        mu0_defined: rec.mu0_defined,
        weights_defined: rec.weights_defined,
        training_loss,
        kkt_residual: sol.kkt_residual,
        ridge: sol.ridge,
    })
}

/// `alpha * (w'X_k - mu0) + mu0` for every problem.
pub fn apply_extremized(a: &ExtremizedAggregator, p: &ForecastPanel) -> Result<Vec<f64>> {
    if a.n_forecasters() != p.n_forecasters() {
        return Err(Error::DimensionMismatch(format!(
            "aggregator has {} weights, panel has {} forecasters",
            a.n_forecasters(),
            p.n_forecasters()
        )));
    }
    let w = DVector::from_column_slice(&a.weights);
    let mu0 = if a.mu0_defined { a.mu0 } else { 0.0 };
    Ok(p.forecasts()
        .tr_mul(&w)
        .iter()
        .map(|xw| a.alpha * (xw - mu0) + mu0)
        .collect())
}

/// Definition of extremization, element-wise: `candidate` lies at least as
/// far from `mu0` as `base`, on the same side.
pub fn is_extremization_of(candidate: &[f64], base: &[f64], mu0: f64) -> Result<Vec<bool>> {
    if candidate.len() != base.len() {
        return Err(Error::DimensionMismatch(format!(
            "candidate has {} entries, base has {}",
            candidate.len(),
            base.len()
        )));
    }
    Ok(candidate
        .iter()
        .zip(base)
        .map(|(&c, &b)| (c <= b && b <= mu0) || (mu0 <= b && b <= c))
        .collect())
}

fn design_matrix(p: &ForecastPanel) -> DMatrix<f64> {
    let n = p.n_forecasters();
    DMatrix::from_fn(p.n_problems(), n + 1, |k, j| {
        if j == 0 {
            1.0
        } else {
            p.forecasts()[(j - 1, k)]
        }
    })
}

fn symmetrize(q: DMatrix<f64>) -> DMatrix<f64> {
    (&q + q.transpose()) * 0.5
}

fn solve_or_fail(problem: QpProblem, what: &str) -> Result<QpSolution> {
    qp::solve(&problem, &QpOptions::default()).map_err(|source| Error::QpFailure {
        context: what.to_string(),
        problem: Box::new(problem),
        source,
    })
}
