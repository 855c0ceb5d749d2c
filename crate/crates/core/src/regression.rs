//! Least-squares forecasters for the concrete compressive-strength case study.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RANK_TOLERANCE: f64 = 1e-10;

/// Predictors in case-study order: `v1 .. v8`.
pub const PREDICTORS: [&str; 8] = [
    "Cement",
    "Coarse Aggregate",
    "Fly Ash",
    "Water",
    "Superplasticizer",
    "Fine Aggregate",
    "Blast Furnace Slag",
    "Age",
];
pub const OUTCOME: &str = "Compressive Strength";

/// The four regression forecasters, by the `v`-indices (zero-based) they use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    M1,
    M2,
    M3,
    MF,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 4] = [ModelSpec::M1, ModelSpec::M2, ModelSpec::M3, ModelSpec::MF];

    pub fn predictors(self) -> &'static [usize] {
        match self {
            ModelSpec::M1 => &[0, 1, 2, 3],
            ModelSpec::M2 => &[4, 5, 6, 7],
            ModelSpec::M3 => &[2, 3, 4, 5],
            ModelSpec::MF => &[0, 1, 2, 3, 4, 5, 6, 7],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelSpec::M1 => "M1",
            ModelSpec::M2 => "M2",
            ModelSpec::M3 => "M3",
            ModelSpec::MF => "MF",
        }
    }
}

/// `K` rows of eight predictors (in `v` order) plus the outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    predictors: DMatrix<f64>,
    outcome: Vec<f64>,
}

impl Dataset {
    pub fn new(predictors: DMatrix<f64>, outcome: Vec<f64>) -> Result<Self> {
        if predictors.nrows() != outcome.len() || predictors.ncols() != PREDICTORS.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} x {} predictors, got {} x {}",
                outcome.len(),
                PREDICTORS.len(),
                predictors.nrows(),
                predictors.ncols()
            )));
        }
        if outcome.is_empty() {
            return Err(Error::DatasetFormat("no data rows".into()));
        }
        if !predictors.iter().chain(&outcome).all(|v| v.is_finite()) {
            return Err(Error::DatasetFormat("non-finite value".into()));
        }
        Ok(Self { predictors, outcome })
    }

    /// Reads a CSV with a header naming the nine dataset columns in any order.
    ///
    /// Header cells are matched case-insensitively on the leading ingredient
    /// name, ignoring spaces and punctuation, so `Cement`, `cement` and
    /// `Cement (component 1)(kg in a m^3 mixture)` are all accepted, as are
    /// the short names `slag`, `flyash` and `csMPa`. The outcome column is the
    /// one mentioning "strength" (or named `csMPa`).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let normalized: Vec<String> = headers.iter().map(normalize_header).collect();
        let unique = |what: &str, hits: Vec<usize>| -> Result<usize> {
            match hits.as_slice() {
                [i] => Ok(*i),
                [] => Err(Error::DatasetFormat(format!("missing column `{what}`"))),
                _ => Err(Error::DatasetFormat(format!("ambiguous column `{what}`"))),
            }
        };
        let columns: Vec<usize> = PREDICTORS
            .iter()
            .zip(ALIASES)
            .map(|(name, aliases)| {
                let hits = (0..normalized.len())
                    .filter(|&i| aliases.iter().any(|a| normalized[i].starts_with(a)))
                    .collect();
                unique(name, hits)
            })
            .collect::<Result<_>>()?;
        let outcome_col = unique(
            OUTCOME,
            (0..normalized.len())
                .filter(|&i| normalized[i].contains("strength") || normalized[i] == "csmpa")
                .collect(),
        )?;

        let mut values = Vec::new();
        let mut outcome = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |col: usize| -> Result<f64> {
                let cell = record.get(col).ok_or_else(|| {
                    Error::DatasetFormat(format!("row {}: missing column {}", line + 2, col + 1))
                })?;
                cell.parse::<f64>().map_err(|_| {
                    Error::DatasetFormat(format!("row {}: `{cell}` is not a number", line + 2))
                })
            };
            for &c in &columns {
                values.push(parse(c)?);
            }
            outcome.push(parse(outcome_col)?);
        }
        let rows = outcome.len();
        let predictors = DMatrix::from_row_slice(rows, PREDICTORS.len(), &values);
        Self::new(predictors, outcome)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv(std::io::BufReader::new(file))
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn predictors(&self) -> &DMatrix<f64> {
        &self.predictors
    }

    pub fn outcomes_at(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.outcome[r]).collect()
    }
}

/// Normalized header prefixes accepted for each entry of [`PREDICTORS`].
const ALIASES: [&[&str]; 8] = [
    &["cement"],
    &["coarseaggregate"],
    &["flyash"],
    &["water"],
    &["superplasticizer"],
    &["fineaggregate"],
    &["blastfurnaceslag", "slag"],
    &["age"],
];

fn normalize_header(h: &str) -> String {
    h.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub predictor_indices: Vec<usize>,
    /// Intercept first, then one coefficient per predictor.
    pub coefficients: Vec<f64>,
    pub rss: f64,
    /// Ratio of largest to smallest `|R_ii|` in the QR factor.
    pub condition_estimate: f64,
}

/// Ordinary least squares with intercept on the given rows, via Householder QR.
pub fn fit_ols(d: &Dataset, predictor_indices: &[usize], rows: &[usize]) -> Result<LinearModel> {
    validate_indices(d, predictor_indices, rows)?;
    let mut seen = predictor_indices.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("predictor indices must be distinct".into()));
    }
    let p = predictor_indices.len();
    if rows.len() < p + 2 {
        return Err(Error::TooFewRows { required: p + 2, got: rows.len() });
    }
    let x = design(d, predictor_indices, rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| d.outcome[r]));

    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min <= RANK_TOLERANCE * max {
        return Err(Error::RankDeficientDesign {
            ratio: if max > 0.0 { min / max } else { 0.0 },
        });
    }
    let qty = qr.q().tr_mul(&y);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficientDesign { ratio: 0.0 })?;
    let resid = &y - &x * &beta;
    Ok(LinearModel {
        predictor_indices: predictor_indices.to_vec(),
        coefficients: beta.iter().copied().collect(),
        rss: resid.norm_squared(),
        condition_estimate: max / min,
    })
}

/// Intercept plus dot product for each listed row.
pub fn predict(m: &LinearModel, d: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
    validate_indices(d, &m.predictor_indices, rows)?;
    if m.coefficients.len() != m.predictor_indices.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} predictors",
            m.coefficients.len(),
            m.predictor_indices.len()
        )));
    }
    let x = design(d, &m.predictor_indices, rows);
    Ok((x * DVector::from_column_slice(&m.coefficients)).iter().copied().collect())
}

fn validate_indices(d: &Dataset, predictors: &[usize], rows: &[usize]) -> Result<()> {
    if let Some(&i) = predictors.iter().find(|&&i| i >= PREDICTORS.len()) {
        return Err(Error::IndexOutOfRange { index: i, limit: PREDICTORS.len() });
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= d.n_rows()) {
        return Err(Error::IndexOutOfRange { index: r, limit: d.n_rows() });
    }
    Ok(())
}

fn design(d: &Dataset, predictors: &[usize], rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), predictors.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            d.predictors[(rows[i], predictors[j - 1])]
        }
    })
}
