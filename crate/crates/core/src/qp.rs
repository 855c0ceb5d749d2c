//! Dense convex quadratic programming with bound and sum constraints.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x'Qx + c'x
//!     subject to  x_i >= 0          for i in the non-negative set
//!                 sum_{i in S} x_i = t   (optional)
//! ```
//!
//! with a primal active-set method. Bounds enter and leave a working set; the
//! sum constraint is eliminated on the free coordinates by expressing one
//! free member of `S` in terms of the others (null-space elimination). The
//! method is deterministic: blocking bounds and released bounds are both
//! chosen by lowest index on ties.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
const SYMMETRY_TOLERANCE: f64 = 1e-12;
const RIDGE_SCALE: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 30;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("infeasible constraints: {0}")]
    InfeasibleConstraint(String),
    #[error("no convergence after {} iterations (kkt residual {:e})", .best.iterations, .best.kkt_residual)]
    MaxIterationsExceeded { best: Box<QpSolution> },
    #[error("converged working set but kkt residual {:e} exceeds tolerance {tol:e}", .best.kkt_residual)]
    ToleranceNotMet { best: Box<QpSolution>, tol: f64 },
}

impl QpError {
    /// Best iterate carried by the error, if any.
    pub fn best(&self) -> Option<&QpSolution> {
        match self {
            QpError::MaxIterationsExceeded { best } | QpError::ToleranceNotMet { best, .. } => {
                Some(best)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumConstraint {
    pub indices: Vec<usize>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    q: DMatrix<f64>,
    c: DVector<f64>,
    nonneg: Vec<bool>,
    sum: Option<SumConstraint>,
}

impl QpProblem {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        let d = c.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(QpError::DimensionMismatch(format!(
                "q is {}x{}, c has length {d}",
                q.nrows(),
                q.ncols()
            )));
        }
        if !q.iter().chain(c.iter()).all(|v| v.is_finite()) {
            return Err(QpError::InvalidProblem("non-finite coefficient".into()));
        }
        let scale = q.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..i {
                if (q[(i, j)] - q[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(QpError::InvalidProblem(format!("q is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            q,
            c,
            nonneg: vec![false; d],
            sum: None,
        })
    }

    /// Constrains the listed coordinates to be non-negative.
    pub fn with_nonneg(mut self, indices: impl IntoIterator<Item = usize>) -> Result<Self, QpError> {
        let d = self.dim();
        for i in indices {
            if i >= d {
                return Err(QpError::DimensionMismatch(format!("bound index {i} >= {d}")));
            }
            self.nonneg[i] = true;
        }
        Ok(self)
    }

    /// Requires the listed coordinates to sum to `target`.
    pub fn with_sum_constraint(mut self, mut indices: Vec<usize>, target: f64) -> Result<Self, QpError> {
        let d = self.dim();
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.iter().find(|&&i| i >= d) {
            return Err(QpError::DimensionMismatch(format!("sum index {i} >= {d}")));
        }
        if !target.is_finite() {
            return Err(QpError::InvalidProblem("non-finite sum target".into()));
        }
        self.sum = Some(SumConstraint { indices, target });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn nonneg_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.nonneg[i]).collect()
    }

    pub fn sum_constraint(&self) -> Option<&SumConstraint> {
        self.sum.as_ref()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }

    /// Same problem with `(q, c)` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q: &self.q * factor,
            c: &self.c * factor,
            ..self.clone()
        }
    }

    fn in_sum(&self) -> Vec<bool> {
        let mut mask = vec![false; self.dim()];
        if let Some(s) = &self.sum {
            for &i in &s.indices {
                mask[i] = true;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    /// Defaults to `10 d^2` working-set changes.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub beta: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Coordinates held at their zero bound.
    pub active_set: Vec<usize>,
    /// Ridge added to a singular reduced Hessian, if one was needed.
    pub ridge: Option<f64>,
}

/// Max-norm KKT residual of `x`: primal feasibility, stationarity on free
/// coordinates, and the multiplier sign condition on coordinates at their bound.
pub fn check_kkt(p: &QpProblem, x: &DVector<f64>) -> Result<f64, QpError> {
    let d = p.dim();
    if x.len() != d {
        return Err(QpError::DimensionMismatch(format!("beta has length {}, expected {d}", x.len())));
    }
    let g = p.gradient(x);
    let in_sum = p.in_sum();
    let at_bound = |i: usize| p.nonneg[i] && x[i] <= 0.0;

    let mut residual: f64 = 0.0;
    for i in 0..d {
        if p.nonneg[i] {
            residual = residual.max(-x[i]);
        }
    }
    let mut nu = 0.0;
    if let Some(s) = &p.sum {
        let total: f64 = s.indices.iter().map(|&i| x[i]).sum();
        residual = residual.max((total - s.target).abs());
        let free: Vec<f64> = s.indices.iter().filter(|&&i| !at_bound(i)).map(|&i| g[i]).collect();
        nu = if free.is_empty() {
            s.indices.iter().map(|&i| -g[i]).fold(f64::NEG_INFINITY, f64::max)
        } else {
            let hi = free.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = free.iter().copied().fold(f64::INFINITY, f64::min);
            -0.5 * (hi + lo)
        };
        if !nu.is_finite() {
            nu = 0.0;
        }
    }
    for i in 0..d {
        let reduced = g[i] + if in_sum[i] { nu } else { 0.0 };
        let violation = if at_bound(i) { (-reduced).max(0.0) } else { reduced.abs() };
        residual = residual.max(violation);
    }
    Ok(residual)
}

/// Solves `p` to KKT tolerance `opts.tol`.
pub fn solve(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution, QpError> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(QpError::InvalidProblem("tolerance must be positive".into()));
    }
    let d = p.dim();
    let max_iter = opts.max_iter.unwrap_or(10 * d * d).max(1);
    let in_sum = p.in_sum();
    let mut x = initial_point(p)?;
    // Bounds currently held at zero.
    let mut working: Vec<bool> = (0..d).map(|i| p.nonneg[i] && x[i] == 0.0).collect();
    let ridge_size = RIDGE_SCALE * p.q.trace().abs().max(f64::MIN_POSITIVE) / d.max(1) as f64;
    let mut ridge_used = None;

    let mut iterations = 0;
    loop {
        if iterations >= max_iter {
            let best = finish(p, x, &working, iterations, ridge_used);
            return Err(QpError::MaxIterationsExceeded { best: Box::new(best) });
        }
        iterations += 1;

        let (target, ridged) = subproblem_minimizer(p, &working, &in_sum, ridge_size);
        if ridged {
            ridge_used = Some(ridge_size);
        }
        let step = &target - &x;
        let step_scale = 1e-13 * (1.0 + x.amax().max(target.amax()));

        if step.amax() <= step_scale {
            x = target;
            clamp_working(&mut x, &working);
            match release_candidate(p, &x, &working, &in_sum, opts.tol) {
                Some(i) => working[i] = false,
                None => {
                    let sol = finish(p, x, &working, iterations, ridge_used);
                    if sol.kkt_residual <= opts.tol {
                        return Ok(sol);
                    }
                    return Err(QpError::ToleranceNotMet {
                        best: Box::new(sol),
                        tol: opts.tol,
                    });
                }
            }
            continue;
        }

        // Ratio test over free non-negative coordinates moving toward zero.
        let mut length = 1.0;
        let mut blocking = None;
        for i in 0..d {
            if p.nonneg[i] && !working[i] && step[i] < 0.0 {
                let ratio = -x[i] / step[i];
                if ratio < length {
                    length = ratio;
                    blocking = Some(i);
                }
            }
        }
        x += &step * length;
        if let Some(i) = blocking {
            working[i] = true;
        }
        clamp_working(&mut x, &working);
    }
}

fn initial_point(p: &QpProblem) -> Result<DVector<f64>, QpError> {
    let mut x = DVector::zeros(p.dim());
    if let Some(s) = &p.sum {
        if s.indices.is_empty() {
            if s.target != 0.0 {
                return Err(QpError::InfeasibleConstraint(format!(
                    "empty sum cannot equal {}",
                    s.target
                )));
            }
            return Ok(x);
        }
        if s.target >= 0.0 {
            let share = s.target / s.indices.len() as f64;
            for &i in &s.indices {
                x[i] = share;
            }
        } else {
            match s.indices.iter().find(|&&i| !p.nonneg[i]) {
                Some(&i) => x[i] = s.target,
                None => {
                    return Err(QpError::InfeasibleConstraint(format!(
                        "non-negative coordinates cannot sum to {}",
                        s.target
                    )))
                }
            }
        }
    }
    Ok(x)
}

fn clamp_working(x: &mut DVector<f64>, working: &[bool]) {
    for (xi, &w) in x.iter_mut().zip(working) {
        if w {
            *xi = 0.0;
        }
    }
}

fn finish(
    p: &QpProblem,
    beta: DVector<f64>,
    working: &[bool],
    iterations: usize,
    ridge: Option<f64>,
) -> QpSolution {
    let kkt_residual = check_kkt(p, &beta).unwrap_or(f64::INFINITY);
    QpSolution {
        objective: p.objective(&beta),
        kkt_residual,
        iterations,
        active_set: (0..beta.len()).filter(|&i| working[i]).collect(),
        ridge,
        beta,
    }
}

/// Index of the bound with the most negative multiplier, lowest index on
/// ties, or `None` when every multiplier is within `-tol / 2`.
fn release_candidate(
    p: &QpProblem,
    x: &DVector<f64>,
    working: &[bool],
    in_sum: &[bool],
    tol: f64,
) -> Option<usize> {
    let g = p.gradient(x);
    let nu = match &p.sum {
        None => 0.0,
        Some(s) => {
            let free: Vec<usize> = s.indices.iter().copied().filter(|&i| !working[i]).collect();
            if free.is_empty() {
                let nu = s.indices.iter().map(|&i| -g[i]).fold(f64::NEG_INFINITY, f64::max);
                if nu.is_finite() { nu } else { 0.0 }
            } else {
                -free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
            }
        }
    };
    let mut best: Option<(usize, f64)> = None;
    for i in 0..x.len() {
        if !working[i] {
            continue;
        }
        let multiplier = g[i] + if in_sum[i] { nu } else { 0.0 };
        if multiplier < -0.5 * tol && best.is_none_or(|(_, m)| multiplier < m) {
            best = Some((i, multiplier));
        }
    }
    best.map(|(i, _)| i)
}

/// Minimizer of the objective over the face where working bounds are zero,
/// subject to the sum constraint. Returns the point and whether a ridge was used.
fn subproblem_minimizer(
    p: &QpProblem,
    working: &[bool],
    in_sum: &[bool],
    ridge: f64,
) -> (DVector<f64>, bool) {
    let d = p.dim();
    let free: Vec<usize> = (0..d).filter(|&i| !working[i]).collect();
    let mut x = DVector::zeros(d);
    if free.is_empty() {
        return (x, false);
    }

    // x_free = base + basis * y
    let pivot = free.iter().copied().find(|&i| in_sum[i]);
    let reduced: Vec<usize> = free.iter().copied().filter(|&i| Some(i) != pivot).collect();
    let mut base = DVector::zeros(d);
    if let (Some(pv), Some(s)) = (pivot, &p.sum) {
        base[pv] = s.target;
    }
    if reduced.is_empty() {
        return (base, false);
    }
    let m = reduced.len();
    let mut basis = DMatrix::zeros(d, m);
    for (col, &i) in reduced.iter().enumerate() {
        basis[(i, col)] = 1.0;
        if let Some(pv) = pivot {
            if in_sum[i] {
                basis[(pv, col)] = -1.0;
            }
        }
    }
    let q_basis = &p.q * &basis;
    let hessian = basis.tr_mul(&q_basis);
    let rhs = -basis.tr_mul(&(&p.q * &base + &p.c));

    let (y, ridged) = solve_psd(&hessian, &rhs, ridge);
    x.copy_from(&(base + basis * y));
    (x, ridged)
}

/// Solves `h y = rhs` for symmetric PSD `h`. Falls back to a ridge with
/// iterative refinement when `h` is numerically singular.
fn solve_psd(h: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> (DVector<f64>, bool) {
    if let Some(chol) = Cholesky::new(h.clone()) {
        let l_diag = chol.l_dirty().diagonal();
        let max = l_diag.amax();
        let min = l_diag.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 1e-7 * max {
            return (chol.solve(rhs), false);
        }
    }
    let mut shifted = h.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += ridge;
    }
    let Some(chol) = Cholesky::new(shifted) else {
        return (DVector::zeros(rhs.len()), true);
    };
    let mut y = chol.solve(rhs);
    for _ in 0..REFINEMENT_STEPS {
        let r = rhs - h * &y;
        if r.amax() <= 1e-15 * (1.0 + rhs.amax()) {
            break;
        }
        y += chol.solve(&r);
    }
    (y, true)
}
