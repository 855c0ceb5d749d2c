//! End-to-end experiment runners: the synthetic study, the concrete
//! cross-validation study, and standalone reliability diagrams.
//!
//! Every output file is a pure function of the configuration, the input
//! bytes and the seed. Floats are written with Rust's shortest round-trip
//! formatting and nothing time- or host-dependent goes into the manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregators::{self, ExtremizedAggregator, WeightVector};
use crate::error::{Error, Result, ResultExt};
use crate::evaluation::{self, Grouping, ReliabilityDiagram};
use crate::panel::ForecastPanel;
use crate::pif::{InformationStructure, StructureSpec};
use crate::regression::{self, Dataset, LinearModel, ModelSpec};
use crate::rng;

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const FOLD_STREAM: u64 = 3;
const DIAGRAM_STREAM_BASE: u64 = 100;
const SPLIT_STREAM_BASE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    NoOverlap,
    HighOverlap,
    Custom(PathBuf),
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::NoOverlap => "No Overlap",
            Scenario::HighOverlap => "High Overlap",
            Scenario::Custom(_) => "Custom",
        }
    }

    pub fn structure(&self) -> Result<InformationStructure> {
        match self {
            Scenario::NoOverlap => Ok(InformationStructure::no_overlap()),
            Scenario::HighOverlap => Ok(InformationStructure::high_overlap()),
            Scenario::Custom(path) => {
                let text = fs::read_to_string(path)
                    .map_err(Error::from)
                    .context(|| format!("reading structure file {}", path.display()))?;
                let spec: StructureSpec = serde_json::from_str(&text)
                    .map_err(Error::from)
                    .context(|| format!("parsing structure file {}", path.display()))?;
                InformationStructure::from_spec(spec)
            }
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-overlap" => Ok(Scenario::NoOverlap),
            "high-overlap" => Ok(Scenario::HighOverlap),
            "" => Err(Error::Config("empty scenario".into())),
            path => Ok(Scenario::Custom(PathBuf::from(path))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::NoOverlap => f.write_str("no-overlap"),
            Scenario::HighOverlap => f.write_str("high-overlap"),
            Scenario::Custom(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub seed: u64,
    pub k_train: usize,
    pub k_test: usize,
    pub scenario: Scenario,
    pub n_bins: usize,
    pub bootstrap_b: usize,
    /// Not echoed in manifests, so outputs do not depend on where they are written.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            k_train: 10_000,
            k_test: 10_000,
            scenario: Scenario::NoOverlap,
            n_bins: evaluation::DEFAULT_BINS,
            bootstrap_b: evaluation::DEFAULT_BOOTSTRAP,
            output_dir: None,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_train < 2 || self.k_test < 2 {
            return Err(Error::Config("k_train and k_test must be at least 2".into()));
        }
        if self.n_bins < 2 {
            return Err(Error::Config("n_bins must be at least 2".into()));
        }
        if self.n_bins > self.k_test {
            return Err(Error::TooManyBins { n_bins: self.n_bins, k: self.k_test });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteConfig {
    pub seed: u64,
    pub folds: usize,
    /// Fraction of each training fold used to fit the regression models;
    /// the rest trains the aggregators.
    pub split_ratio: f64,
    pub n_bins: usize,
    pub bootstrap_b: usize,
    /// Not echoed in manifests, so outputs do not depend on where they are written.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ConcreteConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            folds: 10,
            split_ratio: 0.5,
            n_bins: evaluation::DEFAULT_BINS,
            bootstrap_b: evaluation::DEFAULT_BOOTSTRAP,
            output_dir: None,
        }
    }
}

impl ConcreteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split ratio must lie in (0, 1)".into()));
        }
        if self.n_bins < 2 {
            return Err(Error::Config("n_bins must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramConfig {
    pub n_bins: usize,
    pub bootstrap_b: usize,
    pub seed: u64,
    /// Not echoed in manifests, so outputs do not depend on where they are written.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl Default for DiagramConfig {
    fn default() -> Self {
        Self {
            n_bins: evaluation::DEFAULT_BINS,
            bootstrap_b: evaluation::DEFAULT_BOOTSTRAP,
            seed: 1,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub scenario: String,
    pub forecast: String,
    pub loss: f64,
    pub rel: f64,
    pub res: f64,
    pub unc: f64,
    pub s2: f64,
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub scenario: String,
    pub forecast: String,
    pub mu0: Option<f64>,
    pub alpha: Option<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub scores: Vec<ScoreRow>,
    pub parameters: Vec<ParameterRow>,
}

impl ResultsTable {
    pub fn score(&self, scenario: &str, forecast: &str) -> Option<&ScoreRow> {
        self.scores
            .iter()
            .find(|r| r.scenario == scenario && r.forecast == forecast)
    }

    pub fn parameter(&self, scenario: &str, forecast: &str) -> Option<&ParameterRow> {
        self.parameters
            .iter()
            .find(|r| r.scenario == scenario && r.forecast == forecast)
    }

    /// Rows whose components disagree with the loss by more than their reported residual.
    pub fn identity_violations(&self) -> Vec<&ScoreRow> {
        self.scores
            .iter()
            .filter(|r| {
                let gap = (r.loss - (r.rel - r.res + r.unc)).abs();
                gap > r.identity_residual + 1e-12 * (1.0 + r.loss.abs())
            })
            .collect()
    }

    /// `scenario,forecast,loss,rel,res,unc,s2,identity_residual`
    pub fn write_scores_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "scenario",
            "forecast",
            "loss",
            "rel",
            "res",
            "unc",
            "s2",
            "identity_residual",
        ])?;
        for r in &self.scores {
            w.write_record([
                r.scenario.clone(),
                r.forecast.clone(),
                r.loss.to_string(),
                r.rel.to_string(),
                r.res.to_string(),
                r.unc.to_string(),
                r.s2.to_string(),
                r.identity_residual.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `scenario,forecast,mu0,alpha,w1,...,wN` with blanks where a value does not apply.
    pub fn write_parameters_csv(&self, path: &Path) -> Result<()> {
        let width = self.parameters.iter().map(|r| r.weights.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["scenario".to_string(), "forecast".into(), "mu0".into(), "alpha".into()];
        header.extend((1..=width).map(|j| format!("w{j}")));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.parameters {
            let mut rec = vec![r.scenario.clone(), r.forecast.clone(), opt(r.mu0), opt(r.alpha)];
            rec.extend((0..width).map(|j| r.weights.get(j).map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const BEST_INDIVIDUAL: &str = "Best Individual";
pub const MEDIAN: &str = "Median";
pub const EQUAL_AVERAGE: &str = "Equal Average";
pub const WEIGHTED_AVERAGE: &str = "Weighted Average";
pub const EXTREMIZED: &str = "Extremized";
pub const REVEALED: &str = "Revealed";

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub table: ResultsTable,
    pub structure: InformationStructure,
    pub weighted: WeightVector,
    pub extremized: ExtremizedAggregator,
    /// Zero-based index of the best individual forecaster on the test set.
    pub best_individual: usize,
    pub diagrams: Vec<(String, ReliabilityDiagram)>,
    pub test: ForecastPanel,
}

/// Fits on `k_train` draws and scores every aggregator on `k_test` fresh draws.
pub fn run_simulate(cfg: &SimulateConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let structure = cfg.scenario.structure().context(|| "resolving scenario")?;
    let train_seed = rng::derive_seed(cfg.seed, TRAIN_STREAM);
    let test_seed = rng::derive_seed(cfg.seed, TEST_STREAM);
    let train = structure.sample_panel(cfg.k_train, train_seed).context(|| "sampling training panel")?;
    let test = structure.sample_panel(cfg.k_test, test_seed).context(|| "sampling test panel")?;

    let weighted = aggregators::fit_weighted_average(&train).context(|| "fitting weighted average")?;
    let extremized = aggregators::fit_extremized(&train).context(|| "fitting extremized aggregator")?;

    let y = test.outcomes();
    let n = test.n_forecasters();
    let mut best_individual = 0;
    let mut best_loss = f64::INFINITY;
    for j in 0..n {
        let loss = evaluation::quadratic_loss(y, &test.forecaster(j))?;
        if loss < best_loss {
            best_loss = loss;
            best_individual = j;
        }
    }

    let revealed = match structure.revealed_aggregate(&test) {
        Ok(r) => Some(r),
        Err(Error::SingularStructure { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut forecasts: Vec<(&str, Vec<f64>)> = vec![
        (BEST_INDIVIDUAL, test.forecaster(best_individual)),
        (MEDIAN, aggregators::median_aggregate(&test)),
        (EQUAL_AVERAGE, aggregators::equal_average(&test)),
        (WEIGHTED_AVERAGE, aggregators::apply_weights(&weighted, &test)?),
        (EXTREMIZED, aggregators::apply_extremized(&extremized, &test)?),
    ];
    if let Some(r) = revealed {
        forecasts.push((REVEALED, r));
    }

    let label = cfg.scenario.label();
    let mut table = ResultsTable::default();
    let mut diagrams = Vec::new();
    for (i, (name, f)) in forecasts.iter().enumerate() {
        table.scores.push(score_row(label, name, y, f, cfg.n_bins)?);
        let seed = rng::derive_seed(cfg.seed, DIAGRAM_STREAM_BASE + i as u64);
        let diagram = evaluation::reliability_diagram(y, f, cfg.n_bins, cfg.bootstrap_b, seed)
            .context(|| format!("reliability diagram for {name}"))?;
        diagrams.push((name.to_string(), diagram));
    }
    table.parameters.push(ParameterRow {
        scenario: label.into(),
        forecast: WEIGHTED_AVERAGE.into(),
        mu0: None,
        alpha: None,
        weights: weighted.as_slice().to_vec(),
    });
    table.parameters.push(extremized_row(label, &extremized));

    let report = SimulationReport {
        table,
        structure,
        weighted,
        extremized,
        best_individual,
        diagrams,
        test,
    };
    if let Some(dir) = &cfg.output_dir {
        write_simulation(dir, cfg, &report, train_seed, test_seed)
            .context(|| format!("writing outputs to {}", dir.display()))?;
    }
    Ok(report)
}

fn write_simulation(
    dir: &Path,
    cfg: &SimulateConfig,
    report: &SimulationReport,
    train_seed: u64,
    test_seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.table.write_scores_csv(&dir.join("results.csv"))?;
    report.table.write_parameters_csv(&dir.join("parameters.csv"))?;
    write_json(&dir.join("extremized.json"), &report.extremized.record())?;
    write_json(&dir.join("weighted.json"), &json!({ "weights": report.weighted }))?;
    write_diagrams(dir, &report.diagrams)?;
    let manifest = json!({
        "mode": "simulate",
        "config": cfg,
        "generator": rng::GENERATOR,
        "seeds": { "master": cfg.seed, "train": train_seed, "test": test_seed },
        "structure": report.structure.to_spec(),
        "revealed_coefficients": report.structure.revealed_coefficients().ok().map(|c| c.iter().copied().collect::<Vec<_>>()),
        "revealed_variance": report.structure.revealed_variance().ok(),
        "best_individual": report.best_individual + 1,
        "weighted_average": report.weighted,
        "extremized": report.extremized,
        "results": report.table,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldParameters {
    pub fold: usize,
    pub scenario: String,
    pub weighted: Vec<f64>,
    pub extremized: ExtremizedAggregator,
}

#[derive(Debug, Clone)]
pub struct ConcreteReport {
    pub table: ResultsTable,
    pub folds: Vec<FoldParameters>,
    pub models: Vec<(usize, ModelSpec, LinearModel)>,
    pub diagrams: Vec<(String, ReliabilityDiagram)>,
    /// Pooled out-of-fold outcomes, in fold order.
    pub outcomes: Vec<f64>,
}

impl ConcreteReport {
    /// Mean fitted parameters of the extremized aggregator across folds.
    pub fn mean_extremized(&self, scenario: &str) -> Option<(f64, Vec<f64>)> {
        let fits: Vec<&ExtremizedAggregator> = self
            .folds
            .iter()
            .filter(|f| f.scenario == scenario)
            .map(|f| &f.extremized)
            .collect();
        if fits.is_empty() {
            return None;
        }
        let m = fits.len() as f64;
        let alpha = fits.iter().map(|a| a.alpha).sum::<f64>() / m;
        let n = fits[0].weights.len();
        let weights = (0..n).map(|j| fits.iter().map(|a| a.weights[j]).sum::<f64>() / m).collect();
        Some((alpha, weights))
    }
}

const NO_OVERLAP: &str = "No Overlap";
const HIGH_OVERLAP: &str = "High Overlap";
const INDIVIDUAL: &str = "Individual";

/// Ten-fold (by default) cross-validation of the regression forecasters and
/// the aggregators built on them.
///
/// Rows are permuted once from the master seed and folds are contiguous
/// blocks of that permutation. Inside each fold the remaining rows are
/// shuffled from a fold-specific substream and split: the first part trains
/// the regression models, the second trains the aggregators on the models'
/// forecasts, and everything is scored on the held-out fold.
pub fn run_concrete(cfg: &ConcreteConfig, data: &Dataset) -> Result<ConcreteReport> {
    cfg.validate()?;
    let n_rows = data.n_rows();
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng::substream(cfg.seed, FOLD_STREAM));

    let scenarios: [(&str, [ModelSpec; 2]); 2] = [
        (NO_OVERLAP, [ModelSpec::M1, ModelSpec::M2]),
        (HIGH_OVERLAP, [ModelSpec::M1, ModelSpec::M3]),
    ];
    let mut pooled_y = Vec::new();
    let mut pooled: Vec<(String, String, Vec<f64>)> = Vec::new();
    let mut push = |scenario: &str, name: &str, values: &[f64]| {
        match pooled.iter_mut().find(|(s, n, _)| s == scenario && n == name) {
            Some((_, _, v)) => v.extend_from_slice(values),
            None => pooled.push((scenario.into(), name.into(), values.to_vec())),
        }
    };
    let mut folds = Vec::new();
    let mut models = Vec::new();

    for (fold, block) in evaluation::bin_ranges(n_rows, cfg.folds).enumerate() {
        let fold_ctx = || format!("fold {} of {}", fold + 1, cfg.folds);
        let test_rows: Vec<usize> = order[block.clone()].to_vec();
        let mut rest: Vec<usize> = order[..block.start]
            .iter()
            .chain(&order[block.end..])
            .copied()
            .collect();
        rest.shuffle(&mut rng::substream(cfg.seed, SPLIT_STREAM_BASE + fold as u64));
        let split = ((rest.len() as f64) * cfg.split_ratio).round() as usize;
        let (model_rows, agg_rows) = rest.split_at(split.min(rest.len()));

        let mut agg_preds = Vec::new();
        let mut test_preds = Vec::new();
        for spec in ModelSpec::ALL {
            let m = regression::fit_ols(data, spec.predictors(), model_rows)
                .context(|| format!("{}: fitting {}", fold_ctx(), spec.name()))?;
            agg_preds.push(regression::predict(&m, data, agg_rows).context(fold_ctx)?);
            test_preds.push(regression::predict(&m, data, &test_rows).context(fold_ctx)?);
            models.push((fold, spec, m));
        }
        if test_rows.is_empty() {
            continue;
        }
        let y_agg = data.outcomes_at(agg_rows);
        let y_test = data.outcomes_at(&test_rows);
        pooled_y.extend_from_slice(&y_test);
        for (i, spec) in ModelSpec::ALL.iter().enumerate() {
            push(INDIVIDUAL, spec.name(), &test_preds[i]);
        }

        for (label, [a, b]) in scenarios {
            let pick = |preds: &[Vec<f64>]| vec![preds[a as usize].clone(), preds[b as usize].clone()];
            let ctx = || format!("{}: {label}", fold_ctx());
            let train = ForecastPanel::from_rows(y_agg.clone(), &pick(&agg_preds)).context(ctx)?;
            let test = ForecastPanel::from_rows(y_test.clone(), &pick(&test_preds)).context(ctx)?;
            let weighted = aggregators::fit_weighted_average(&train).context(ctx)?;
            let extremized = aggregators::fit_extremized(&train).context(ctx)?;
            push(label, EQUAL_AVERAGE, &aggregators::equal_average(&test));
            push(label, WEIGHTED_AVERAGE, &aggregators::apply_weights(&weighted, &test)?);
            push(label, EXTREMIZED, &aggregators::apply_extremized(&extremized, &test)?);
            folds.push(FoldParameters {
                fold,
                scenario: label.into(),
                weighted: weighted.as_slice().to_vec(),
                extremized,
            });
        }
    }

    let mut table = ResultsTable::default();
    let mut diagrams = Vec::new();
    for (i, (scenario, name, f)) in pooled.iter().enumerate() {
        table.scores.push(score_row(scenario, name, &pooled_y, f, cfg.n_bins)?);
        let seed = rng::derive_seed(cfg.seed, DIAGRAM_STREAM_BASE + i as u64);
        let d = evaluation::reliability_diagram(&pooled_y, f, cfg.n_bins, cfg.bootstrap_b, seed)
            .context(|| format!("reliability diagram for {scenario} {name}"))?;
        diagrams.push((format!("{scenario} {name}"), d));
    }
    let mut report = ConcreteReport {
        table,
        folds,
        models,
        diagrams,
        outcomes: pooled_y,
    };
    for (label, _) in scenarios {
        let wanted: Vec<&FoldParameters> = report.folds.iter().filter(|f| f.scenario == label).collect();
        if wanted.is_empty() {
            continue;
        }
        let m = wanted.len() as f64;
        let n = wanted[0].weighted.len();
        let weights = (0..n).map(|j| wanted.iter().map(|f| f.weighted[j]).sum::<f64>() / m).collect();
        report.table.parameters.push(ParameterRow {
            scenario: label.into(),
            forecast: WEIGHTED_AVERAGE.into(),
            mu0: None,
            alpha: None,
            weights,
        });
        let (alpha, weights) = report.mean_extremized(label).expect("non-empty");
        let mu0s: Vec<f64> = wanted
            .iter()
            .filter(|f| f.extremized.mu0_defined)
            .map(|f| f.extremized.mu0)
            .collect();
        report.table.parameters.push(ParameterRow {
            scenario: label.into(),
            forecast: EXTREMIZED.into(),
            mu0: (!mu0s.is_empty()).then(|| mu0s.iter().sum::<f64>() / mu0s.len() as f64),
            alpha: Some(alpha),
            weights,
        });
    }

    if let Some(dir) = &cfg.output_dir {
        write_concrete(dir, cfg, &report).context(|| format!("writing outputs to {}", dir.display()))?;
    }
    Ok(report)
}

/// Loads the dataset and runs [`run_concrete`].
pub fn run_concrete_file(cfg: &ConcreteConfig, path: &Path) -> Result<ConcreteReport> {
    let data = Dataset::from_path(path).context(|| format!("reading dataset {}", path.display()))?;
    run_concrete(cfg, &data)
}

fn write_concrete(dir: &Path, cfg: &ConcreteConfig, report: &ConcreteReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.table.write_scores_csv(&dir.join("results.csv"))?;
    report.table.write_parameters_csv(&dir.join("parameters.csv"))?;
    write_diagrams(dir, &report.diagrams)?;
    let models: Vec<_> = report
        .models
        .iter()
        .map(|(fold, spec, m)| json!({ "fold": fold + 1, "model": spec.name(), "fit": m }))
        .collect();
    let manifest = json!({
        "mode": "concrete",
        "config": cfg,
        "generator": rng::GENERATOR,
        "rows": report.outcomes.len(),
        "folds": report.folds,
        "models": models,
        "results": report.table,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

#[derive(Debug, Clone)]
pub struct DiagramReport {
    pub diagram: ReliabilityDiagram,
    pub decomposition: evaluation::DecompositionResult,
}

/// Reads `(y, f)` pairs: two numeric columns with an optional header row.
pub fn read_pairs<R: std::io::Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let (mut y, mut f) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("line {}: expected 2 columns, got {}", i + 1, rec.len())));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => {
                y.push(a);
                f.push(b);
            }
            _ if i == 0 => continue,
            _ => return Err(Error::Parse(format!("line {}: non-numeric value", i + 1))),
        }
    }
    if y.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok((y, f))
}

/// Reliability diagram of a single forecast series.
pub fn run_diagram(cfg: &DiagramConfig, y: &[f64], f: &[f64]) -> Result<DiagramReport> {
    let diagram = evaluation::reliability_diagram(y, f, cfg.n_bins, cfg.bootstrap_b, cfg.seed)?;
    let decomposition = evaluation::decompose(y, f, Grouping::EqualCount(cfg.n_bins))?;
    let report = DiagramReport { diagram, decomposition };
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        report.diagram.write_bins_csv(fs::File::create(dir.join("bins.csv"))?)?;
        report.diagram.write_hist_csv(fs::File::create(dir.join("hist.csv"))?)?;
        let summary = json!({
            "config": cfg,
            "generator": rng::GENERATOR,
            "diagram": report.diagram,
            "decomposition": report.decomposition,
        });
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(report)
}

pub fn run_diagram_file(cfg: &DiagramConfig, path: &Path) -> Result<DiagramReport> {
    let file = fs::File::open(path).map_err(Error::from).context(|| format!("opening {}", path.display()))?;
    let (y, f) = read_pairs(std::io::BufReader::new(file))?;
    run_diagram(cfg, &y, &f)
}

/// `{context, q, c, beta, residual}` for a failed fit, when the error carries one.
pub fn qp_failure_record(err: &Error) -> Option<serde_json::Value> {
    match err.root() {
        Error::QpFailure { context, problem, source } => {
            let best = source.best();
            let rows: Vec<Vec<f64>> = problem.q().row_iter().map(|r| r.iter().copied().collect()).collect();
            Some(json!({
                "context": context,
                "error": source.to_string(),
                "q": rows,
                "c": problem.c().iter().copied().collect::<Vec<_>>(),
                "beta": best.map(|b| b.beta.iter().copied().collect::<Vec<_>>()),
                "residual": best.map(|b| b.kkt_residual),
            }))
        }
        _ => None,
    }
}

fn score_row(scenario: &str, name: &str, y: &[f64], f: &[f64], n_bins: usize) -> Result<ScoreRow> {
    let d = evaluation::decompose(y, f, Grouping::EqualCount(n_bins))
        .context(|| format!("scoring {scenario} {name}"))?;
    Ok(ScoreRow {
        scenario: scenario.into(),
        forecast: name.into(),
        loss: d.loss,
        rel: d.rel,
        res: d.res,
        unc: d.unc,
        s2: evaluation::sample_variance(f)?,
        identity_residual: d.identity_residual,
    })
}

fn extremized_row(scenario: &str, a: &ExtremizedAggregator) -> ParameterRow {
    ParameterRow {
        scenario: scenario.into(),
        forecast: EXTREMIZED.into(),
        mu0: a.mu0_defined.then_some(a.mu0),
        alpha: Some(a.alpha),
        weights: a.weights.clone(),
    }
}

fn write_diagrams(dir: &Path, diagrams: &[(String, ReliabilityDiagram)]) -> Result<()> {
    let root = dir.join("diagrams");
    fs::create_dir_all(&root)?;
    for (name, d) in diagrams {
        let sub = root.join(slug(name));
        fs::create_dir_all(&sub)?;
        d.write_bins_csv(fs::File::create(sub.join("bins.csv"))?)?;
        d.write_hist_csv(fs::File::create(sub.join("hist.csv"))?)?;
        write_json(&sub.join("diagram.json"), d)?;
    }
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn slug(name: &str) -> String {
    name.to_ascii_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}
