use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Outcomes of `K` problems together with an `N x K` forecast matrix whose
/// entry `(j, k)` is forecaster `j`'s prediction for problem `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPanel {
    outcomes: Vec<f64>,
    forecasts: DMatrix<f64>,
}

impl ForecastPanel {
    pub fn new(outcomes: Vec<f64>, forecasts: DMatrix<f64>) -> Result<Self> {
        if forecasts.nrows() == 0 || forecasts.ncols() == 0 || outcomes.is_empty() {
            return Err(Error::EmptyPanel);
        }
        if forecasts.ncols() != outcomes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} outcomes but {} forecast columns",
                outcomes.len(),
                forecasts.ncols()
            )));
        }
        if !outcomes.iter().chain(forecasts.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPanel("non-finite value".into()));
        }
        Ok(Self { outcomes, forecasts })
    }

    /// Builds a panel from one forecast vector per forecaster.
    pub fn from_rows(outcomes: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let k = outcomes.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!(
                "forecaster row has {} entries, expected {k}",
                bad.len()
            )));
        }
        let forecasts = DMatrix::from_fn(rows.len(), k, |j, i| rows[j][i]);
        Self::new(outcomes, forecasts)
    }

    pub fn n_forecasters(&self) -> usize {
        self.forecasts.nrows()
    }

    pub fn n_problems(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn forecasts(&self) -> &DMatrix<f64> {
        &self.forecasts
    }

    /// Forecaster `j`'s predictions across all problems.
    pub fn forecaster(&self, j: usize) -> Vec<f64> {
        self.forecasts.row(j).iter().copied().collect()
    }

    /// Panel restricted to the given forecasters, in the given order.
    pub fn select_forecasters(&self, which: &[usize]) -> Result<Self> {
        let n = self.n_forecasters();
        if let Some(&bad) = which.iter().find(|&&j| j >= n) {
            return Err(Error::IndexOutOfRange { index: bad, limit: n });
        }
        let forecasts = self.forecasts.select_rows(which);
        Self::new(self.outcomes.clone(), forecasts)
    }

    /// Panel restricted to the given problems, in the given order.
    pub fn select_problems(&self, which: &[usize]) -> Result<Self> {
        let k = self.n_problems();
        if let Some(&bad) = which.iter().find(|&&i| i >= k) {
            return Err(Error::IndexOutOfRange { index: bad, limit: k });
        }
        let outcomes = which.iter().map(|&i| self.outcomes[i]).collect();
        Self::new(outcomes, self.forecasts.select_columns(which))
    }

    /// Adds `shift` to every outcome and forecast.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            outcomes: self.outcomes.iter().map(|y| y + shift).collect(),
            forecasts: self.forecasts.add_scalar(shift),
        }
    }

    /// Writes the panel as CSV with header `y,x1,...,xN`, one row per problem.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.n_forecasters()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (k, y) in self.outcomes.iter().enumerate() {
            let mut record = vec![y.to_string()];
            record.extend(self.forecasts.column(k).iter().map(|x| x.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}
