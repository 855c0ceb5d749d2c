//! Gaussian partial-information model.
//!
//! The outcome `Y` and the `N` forecasts are jointly Gaussian with mean zero
//! and covariance
//!
//! ```text
//!     [ 1      delta' ]
//!     [ delta  Sigma  ]
//! ```
//!
//! where `Sigma` has the information levels `delta` on its diagonal and the
//! pairwise information overlaps off the diagonal. Under this model every
//! forecaster is reliable and the revealed aggregator `E(Y | X)` is the
//! linear map `delta' Sigma^{-1} X`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ForecastPanel;
use crate::rng;

/// Eigenvalues above `-PSD_TOLERANCE * lambda_max` count as non-negative.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// `Sigma` is treated as singular when `lambda_min <= SINGULAR_TOLERANCE * lambda_max`.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;
const JITTER_SCALE: f64 = 1e-12;
const JITTER_ATTEMPTS: usize = 3;

/// Off-diagonal information overlap, either shared by every pair or given per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Overlap {
    Constant(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for Overlap {
    fn default() -> Self {
        Overlap::Constant(0.0)
    }
}

/// JSON form accepted by the CLI: `{"delta": [...], "rho": scalar-or-matrix}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub delta: Vec<f64>,
    #[serde(default)]
    pub rho: Overlap,
}

/// A validated information structure.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationStructure {
    delta: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl InformationStructure {
    pub fn new(delta: Vec<f64>, overlap: Overlap) -> Result<Self> {
        let n = delta.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("delta must be non-empty".into()));
        }
        for (index, &value) in delta.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::DeltaOutOfRange { index, value });
            }
        }
        let sigma = match overlap {
            Overlap::Constant(rho) => {
                if !rho.is_finite() {
                    return Err(Error::InvalidPanel("overlap must be finite".into()));
                }
                DMatrix::from_fn(n, n, |i, j| if i == j { delta[i] } else { rho })
            }
            Overlap::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch(format!(
                        "overlap matrix must be {n}x{n}"
                    )));
                }
                for i in 0..n {
                    for j in 0..i {
                        if rows[i][j] != rows[j][i] || !rows[i][j].is_finite() {
                            return Err(Error::AsymmetricOverlap { row: i, col: j });
                        }
                    }
                }
                DMatrix::from_fn(n, n, |i, j| if i == j { delta[i] } else { rows[i][j] })
            }
        };
        let s = Self {
            delta: DVector::from_vec(delta),
            sigma,
        };
        let min_eigenvalue = psd_violation(&s.covariance());
        if let Some(min_eigenvalue) = min_eigenvalue {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue });
        }
        Ok(s)
    }

    pub fn from_spec(spec: StructureSpec) -> Result<Self> {
        Self::new(spec.delta, spec.rho)
    }

    /// Five forecasters with `delta_j = 0.1 + 0.02 j` and independent information.
    pub fn no_overlap() -> Self {
        Self::new(scenario_delta(), Overlap::Constant(0.0)).expect("valid scenario")
    }

    /// Five forecasters with `delta_j = 0.1 + 0.02 j` sharing overlap 0.12.
    pub fn high_overlap() -> Self {
        Self::new(scenario_delta(), Overlap::Constant(0.12)).expect("valid scenario")
    }

    pub fn n_forecasters(&self) -> usize {
        self.delta.len()
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    /// The forecast covariance `Sigma` (overlaps off the diagonal, `delta` on it).
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Full `(N+1) x (N+1)` covariance of `(Y, X_1, ..., X_N)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n_forecasters();
        let mut c = DMatrix::zeros(n + 1, n + 1);
        c[(0, 0)] = 1.0;
        for j in 0..n {
            c[(0, j + 1)] = self.delta[j];
            c[(j + 1, 0)] = self.delta[j];
        }
        c.view_mut((1, 1), (n, n)).copy_from(&self.sigma);
        c
    }

    pub fn to_spec(&self) -> StructureSpec {
        let n = self.n_forecasters();
        StructureSpec {
            delta: self.delta.iter().copied().collect(),
            rho: Overlap::Matrix(
                (0..n)
                    .map(|i| (0..n).map(|j| self.sigma[(i, j)]).collect())
                    .collect(),
            ),
        }
    }

    /// Coefficients `c = Sigma^{-1} delta` of the revealed aggregator `c'X`.
    pub fn revealed_coefficients(&self) -> Result<DVector<f64>> {
        self.check_invertible()?;
        // LU keeps the diagonal case exact: delta_j / delta_j == 1.
        self.sigma
            .clone()
            .lu()
            .solve(&self.delta)
            .ok_or(Error::SingularStructure { ratio: 0.0 })
    }

    /// `Var(X'') = delta' Sigma^{-1} delta`.
    pub fn revealed_variance(&self) -> Result<f64> {
        Ok(self.delta.dot(&self.revealed_coefficients()?))
    }

    /// The revealed aggregate `c'X_k` for every problem of `panel`.
    pub fn revealed_aggregate(&self, panel: &ForecastPanel) -> Result<Vec<f64>> {
        if panel.n_forecasters() != self.n_forecasters() {
            return Err(Error::DimensionMismatch(format!(
                "panel has {} forecasters, structure has {}",
                panel.n_forecasters(),
                self.n_forecasters()
            )));
        }
        let c = self.revealed_coefficients()?;
        Ok(panel.forecasts().tr_mul(&c).iter().copied().collect())
    }

    /// `k` independent draws of `(Y, X)`, a pure function of `(self, k, seed)`.
    pub fn sample_panel(&self, k: usize, seed: u64) -> Result<ForecastPanel> {
        self.sample_panel_with(k, &mut rng::substream(seed, 0))
    }

    /// Like [`sample_panel`](Self::sample_panel) but drawing from a caller-supplied generator.
    pub fn sample_panel_with<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<ForecastPanel> {
        if k == 0 {
            return Err(Error::EmptyPanel);
        }
        let factor = covariance_factor(&self.covariance())?;
        let dim = factor.nrows();
        let mut outcomes = Vec::with_capacity(k);
        let mut forecasts = DMatrix::zeros(dim - 1, k);
        let mut z = DVector::zeros(dim);
        for col in 0..k {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let draw = &factor * &z;
            outcomes.push(draw[0]);
            forecasts.column_mut(col).copy_from(&draw.rows(1, dim - 1));
        }
        ForecastPanel::new(outcomes, forecasts)
    }

    fn check_invertible(&self) -> Result<()> {
        let eig = SymmetricEigen::new(self.sigma.clone()).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        if max <= 0.0 || min <= SINGULAR_TOLERANCE * max {
            return Err(Error::SingularStructure { ratio });
        }
        Ok(())
    }
}

fn scenario_delta() -> Vec<f64> {
    (1..=5).map(|j| 0.1 + 0.02 * j as f64).collect()
}

/// Most negative eigenvalue when it falls below the PSD tolerance.
fn psd_violation(c: &DMatrix<f64>) -> Option<f64> {
    let eig = SymmetricEigen::new(c.clone()).eigenvalues;
    let max = eig.max().max(0.0);
    let min = eig.min();
    (min < -PSD_TOLERANCE * max).then_some(min)
}

/// Lower-triangular `L` with `L L' = c`.
///
/// Pivots at or below `1e-12 * max(diag)` are treated as exact zeros so that
/// boundary structures (a forecaster with `delta = 1`) factor without
/// perturbation. A pivot that is clearly negative triggers up to three
/// retries with diagonal jitter `1e-12 * max(diag)` added each time.
pub fn covariance_factor(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let max_diag = c.diagonal().max().max(0.0);
    let jitter = JITTER_SCALE * max_diag.max(f64::MIN_POSITIVE);
    let mut work = c.clone();
    for attempt in 0..=JITTER_ATTEMPTS {
        if attempt > 0 {
            for i in 0..work.nrows() {
                work[(i, i)] += jitter;
            }
        }
        if let Some(l) = semidefinite_cholesky(&work, jitter) {
            return Ok(l);
        }
    }
    Err(Error::CholeskyFailure {
        attempts: JITTER_ATTEMPTS,
    })
}

fn semidefinite_cholesky(a: &DMatrix<f64>, zero_pivot: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d > zero_pivot {
            let root = d.sqrt();
            l[(j, j)] = root;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / root;
            }
        } else if d >= -zero_pivot {
            // Zero pivot: the rest of the column must vanish too.
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                if s.abs() > zero_pivot.sqrt() {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}
