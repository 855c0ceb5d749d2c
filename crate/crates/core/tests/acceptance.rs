//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails. Criterion 9 needs the 1,030-row concrete CSV, found via
//! `EXTREMIZE_CONCRETE_CSV` or `data/concrete.csv` at the workspace root.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use extremize::aggregators::{
    apply_extremized, apply_weights, fit_extremized, fit_weighted_average, ExtremizedAggregator, WeightVector,
};
use extremize::evaluation::{decompose, Grouping};
use extremize::experiment::{
    self, run_concrete, run_diagram, run_simulate, ConcreteConfig, DiagramConfig, Scenario, SimulateConfig,
    SimulationReport, EQUAL_AVERAGE, EXTREMIZED, REVEALED, WEIGHTED_AVERAGE,
};
use extremize::pif::InformationStructure;
use extremize::regression::Dataset;
use extremize::ForecastPanel;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TABLE_SEED: u64 = 20_261_016;

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn main() -> ExitCode {
    let mut tables: Option<(SimulationReport, SimulationReport)> = None;
    let criteria: Vec<(u32, &str, Duration)> = vec![
        (1, "revealed-aggregator closed forms", Duration::from_secs(1)),
        (2, "exact decomposition identity", Duration::from_secs(10)),
        (3, "QP oracle equivalence", Duration::from_secs(30)),
        (4, "averaging at Monte Carlo scale", Duration::from_secs(60)),
        (5, "revealed variance expansion", Duration::from_secs(5)),
        (6, "fitted parameters of the simulation study", Duration::from_secs(60)),
        (7, "test losses of the simulation study", Duration::from_secs(60)),
        (8, "transform algebra", Duration::from_secs(1)),
        (9, "concrete case study", Duration::from_secs(120)),
        (10, "determinism", Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (id, name, budget) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(|| match id {
            1 => wrap(criterion_1()),
            2 => wrap(criterion_2()),
            3 => wrap(criterion_3()),
            4 => wrap(criterion_4()),
            5 => wrap(criterion_5()),
            6 => wrap(criterion_6(tables.get_or_insert_with(simulation_tables))),
            7 => wrap(criterion_7(tables.get_or_insert_with(simulation_tables))),
            8 => wrap(criterion_8()),
            9 => criterion_9(),
            10 => wrap(criterion_10()),
            _ => unreachable!(),
        }));
        let elapsed = start.elapsed();
        let outcome = match result {
            Ok(Outcome::Pass(_)) if elapsed > budget => {
                Outcome::Fail(format!("took {:.1}s, budget {}s", elapsed.as_secs_f64(), budget.as_secs()))
            }
            Ok(o) => o,
            Err(p) => Outcome::Fail(format!("panicked: {}", panic_message(&p))),
        };
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        println!(
            "criterion {id:>2} {tag:<7} {name} ({:.2}s): {detail}",
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn wrap(c: Check) -> Outcome {
    match c {
        Ok(d) => Outcome::Pass(d),
        Err(d) => Outcome::Fail(d),
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn criterion_1() -> Check {
    let none = InformationStructure::no_overlap();
    let high = InformationStructure::high_overlap();
    let c0 = none.revealed_coefficients().map_err(|e| e.to_string())?;
    ensure!(c0.iter().all(|&v| v == 1.0), "no-overlap coefficients {c0:?}");
    let c1 = high.revealed_coefficients().map_err(|e| e.to_string())?;
    let expected = [-3.0, 1.0, 1.0, 1.0, 1.0];
    let err = c1.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(err <= 1e-8, "high-overlap coefficients {c1:?}");
    let v0 = none.revealed_variance().map_err(|e| e.to_string())?;
    let v1 = high.revealed_variance().map_err(|e| e.to_string())?;
    ensure!((v0 - 0.80).abs() <= 1e-10 && (v1 - 0.32).abs() <= 1e-10, "variances {v0}, {v1}");
    Ok(format!("coefficient error {err:.1e}, variances {v0:.12} and {v1:.12}"))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let k = rng.random_range(1..=500);
        let support: Vec<f64> = (0..rng.random_range(1..=20)).map(|_| rng.random_range(-50.0..50.0)).collect();
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(-50.0..50.0)).collect();
        let f: Vec<f64> = (0..k).map(|_| support[rng.random_range(0..support.len())]).collect();
        let d = decompose(&y, &f, Grouping::Exact).map_err(|e| e.to_string())?;
        worst = worst.max((d.loss - (d.rel - d.res + d.unc)).abs());
    }
    ensure!(worst <= 1e-10, "worst identity gap {worst:e}");
    Ok(format!("worst gap {worst:.1e} over 1000 panels"))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_gap, mut worst_kkt): (f64, f64) = (0.0, 0.0);
    for i in 0..200 {
        let n = rng.random_range(1..=5);
        let k = rng.random_range(n + 2..=200);
        let s = common::interval_structure(&mut rng, n);
        let p = s
            .sample_panel_with(k, &mut rng)
            .map_err(|e| e.to_string())?
            .shifted(rng.random_range(-5.0..5.0));
        let a = fit_extremized(&p).map_err(|e| format!("instance {i}: {e}"))?;
        let rows = common::design_rows(&p);
        let mask: Vec<bool> = (0..=n).map(|j| j > 0).collect();
        let (_, oracle) = common::projected_gradient(&rows, p.outcomes(), &mask);
        worst_gap = worst_gap.max((a.training_loss - oracle).abs());
        worst_kkt = worst_kkt.max(a.kkt_residual);
    }
    ensure!(worst_gap <= 1e-8, "objective gap {worst_gap:e}");
    ensure!(worst_kkt <= 1e-9, "KKT residual {worst_kkt:e}");
    Ok(format!("max objective gap {worst_gap:.1e}, max KKT residual {worst_kkt:.1e}"))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = 20_000;
    let mut worst_var_margin = f64::INFINITY;
    let mut worst_z: f64 = 0.0;
    for i in 0..50 {
        let n = rng.random_range(2..=6);
        let s = common::interval_structure(&mut rng, n);
        let train = s.sample_panel_with(k, &mut rng).map_err(|e| e.to_string())?;
        let test = s.sample_panel_with(k, &mut rng).map_err(|e| e.to_string())?;
        let w = fit_weighted_average(&train).map_err(|e| format!("structure {i}: {e}"))?;
        let xw = apply_weights(&w, &test).map_err(|e| e.to_string())?;
        let vw = common::var(&xw);
        let vmax = (0..n).map(|j| common::var(&test.forecaster(j))).fold(0.0, f64::max);
        let sigma = vmax * (2.0 / (k as f64 - 1.0)).sqrt();
        worst_var_margin = worst_var_margin.min((vmax + 3.0 * sigma - vw) / sigma);
        ensure!(vw <= vmax + 3.0 * sigma, "structure {i}: Var(X_w) {vw} > {vmax} + 3 sigma");
        let diff: Vec<f64> = xw.iter().zip(test.outcomes()).map(|(a, b)| a - b).collect();
        let se = (common::var(&diff) / k as f64).sqrt();
        let z = common::mean(&diff).abs() / se;
        worst_z = worst_z.max(z);
        ensure!(z <= 4.0, "structure {i}: mean gap {z:.2} standard errors");
    }
    Ok(format!("smallest variance margin {worst_var_margin:.1} sigma, largest mean gap {worst_z:.2} SE"))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::INFINITY;
    for i in 0..1_000 {
        let n = rng.random_range(1..=8);
        let s = common::interval_structure(&mut rng, n);
        let v = s.revealed_variance().map_err(|e| format!("structure {i}: {e}"))?;
        let max_delta = s.delta().iter().copied().fold(0.0, f64::max);
        worst = worst.min(v - max_delta);
        ensure!(v >= max_delta - 1e-9, "structure {i}: {v} < {max_delta}");
    }
    Ok(format!("min revealed_variance - max delta = {worst:.3e}"))
}

fn simulation_tables() -> (SimulationReport, SimulationReport) {
    let run = |scenario| {
        run_simulate(&SimulateConfig {
            seed: TABLE_SEED,
            k_train: 10_000,
            k_test: 10_000,
            scenario,
            ..SimulateConfig::default()
        })
        .expect("simulation runs")
    };
    (run(Scenario::NoOverlap), run(Scenario::HighOverlap))
}

fn criterion_6((none, high): &(SimulationReport, SimulationReport)) -> Check {
    let a = &none.extremized;
    ensure!((a.alpha - 5.0137).abs() <= 0.5, "no-overlap alpha {}", a.alpha);
    ensure!(a.weights.iter().all(|w| (w - 0.2).abs() <= 0.05), "no-overlap weights {:?}", a.weights);
    let b = &high.extremized;
    ensure!((b.alpha - 1.3048).abs() <= 0.3, "high-overlap alpha {}", b.alpha);
    ensure!(b.weights[0] <= 0.03 && b.weights[1] <= 0.03, "high-overlap weights {:?}", b.weights);
    Ok(format!(
        "no overlap alpha {:.4} w {}; high overlap alpha {:.4} w {}",
        a.alpha,
        fmt_vec(&a.weights),
        b.alpha,
        fmt_vec(&b.weights)
    ))
}

fn criterion_7((none, high): &(SimulationReport, SimulationReport)) -> Check {
    let score = |r: &SimulationReport, name: &str| {
        r.table
            .scores
            .iter()
            .find(|s| s.forecast == name)
            .cloned()
            .ok_or_else(|| format!("missing row {name}"))
    };
    let xs = score(none, EXTREMIZED)?;
    let xr = score(none, REVEALED)?;
    ensure!((xs.loss - 0.1971).abs() <= 0.02, "no-overlap X* loss {}", xs.loss);
    ensure!((xr.loss - 0.1969).abs() <= 0.02, "no-overlap X'' loss {}", xr.loss);
    let hr = score(high, REVEALED)?;
    ensure!((hr.loss - 0.6837).abs() <= 0.03, "high-overlap X'' loss {}", hr.loss);
    ensure!((hr.s2 - 0.318).abs() <= 0.03, "high-overlap X'' variance {}", hr.s2);
    let xbar = score(none, EQUAL_AVERAGE)?;
    let xw = score(none, WEIGHTED_AVERAGE)?;
    ensure!(xbar.rel >= 5.0 * xs.rel, "X-bar REL {} vs X* REL {}", xbar.rel, xs.rel);
    ensure!(xw.rel >= 5.0 * xs.rel, "X_w REL {} vs X* REL {}", xw.rel, xs.rel);
    for r in [none, high] {
        ensure!(r.table.identity_violations().is_empty(), "decomposition identity violated");
    }
    Ok(format!(
        "X* {:.4}, X'' {:.4}; high X'' {:.4} (s2 {:.3}); REL X-bar {:.4}, X_w {:.4}, X* {:.4}",
        xs.loss, xr.loss, hr.loss, hr.s2, xbar.rel, xw.rel, xs.rel
    ))
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(3..=100);
        let x = DMatrix::from_fn(n, k, |_, _| rng.random_range(-10.0..10.0));
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
        let p = ForecastPanel::new(y, x).map_err(|e| e.to_string())?;
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let alpha = rng.random_range(1.0..10.0);
        let mu0 = rng.random_range(-5.0..5.0);
        let xw = apply_weights(&WeightVector::new(w.clone()).map_err(|e| e.to_string())?, &p).map_err(|e| e.to_string())?;

        let a = ExtremizedAggregator::from_parameters(alpha, w.clone(), mu0).map_err(|e| e.to_string())?;
        let xs = apply_extremized(&a, &p).map_err(|e| e.to_string())?;
        let rel = (common::var(&xs) - alpha * alpha * common::var(&xw)).abs() / common::var(&xs);
        worst = worst.max(rel);
        ensure!(rel <= 1e-9, "panel {i}: relative variance error {rel:e}");

        let unit = ExtremizedAggregator::from_parameters(1.0, w, mu0).map_err(|e| e.to_string())?;
        ensure!(apply_extremized(&unit, &p).map_err(|e| e.to_string())? == xw, "panel {i}: alpha = 1 differs");
    }
    Ok(format!("worst relative variance error {worst:.1e}; alpha = 1 exact on 200 panels"))
}

fn concrete_path() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("EXTREMIZE_CONCRETE_CSV") {
        return Some(PathBuf::from(p));
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/concrete.csv");
    p.is_file().then_some(p)
}

fn criterion_9() -> Outcome {
    let Some(path) = concrete_path() else {
        return Outcome::Skipped("dataset not found; set EXTREMIZE_CONCRETE_CSV or add data/concrete.csv".into());
    };
    wrap((|| {
        let data = Dataset::from_path(&path).map_err(|e| e.to_string())?;
        ensure!(data.n_rows() == 1_030, "expected 1030 rows, got {}", data.n_rows());
        let r = run_concrete(&ConcreteConfig::default(), &data).map_err(|e| e.to_string())?;
        let score = |s: &str, f: &str| r.table.score(s, f).cloned().ok_or_else(|| format!("missing {s} {f}"));
        let mf = score("Individual", "MF")?;
        ensure!((mf.loss - 110.91).abs() <= 12.0, "M_F loss {}", mf.loss);
        let mut detail = format!("M_F {:.2}", mf.loss);
        for (scenario, loss, alpha) in [("No Overlap", 133.23, 1.6950), ("High Overlap", 169.92, 1.4382)] {
            let xs = score(scenario, EXTREMIZED)?;
            let xw = score(scenario, WEIGHTED_AVERAGE)?;
            let (a, _) = r.mean_extremized(scenario).ok_or("no folds")?;
            ensure!((xs.loss - loss).abs() <= 15.0, "{scenario} X* loss {}", xs.loss);
            ensure!((a - alpha).abs() <= 0.35, "{scenario} alpha {a}");
            ensure!(xs.rel <= xw.rel, "{scenario} REL X* {} > X_w {}", xs.rel, xw.rel);
            detail += &format!("; {scenario} X* {:.2} alpha {a:.4} REL {:.2} <= {:.2}", xs.loss, xs.rel, xw.rel);
        }
        Ok(detail)
    })())
}

fn criterion_10() -> Check {
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().expect("tempdir")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let csv = common::synthetic_concrete_csv(&mut rng, 300);
    let data = Dataset::from_csv(csv.as_bytes()).map_err(|e| e.to_string())?;
    let y: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
    let f: Vec<f64> = y.iter().map(|v| 0.5 * v + rng.random_range(0.0..0.5)).collect();
    for d in &dirs {
        for scenario in [Scenario::NoOverlap, Scenario::HighOverlap] {
            let out = d.path().join(experiment::Scenario::label(&scenario).replace(' ', "_"));
            run_simulate(&SimulateConfig {
                seed: TABLE_SEED,
                scenario,
                output_dir: Some(out),
                ..SimulateConfig::default()
            })
            .map_err(|e| e.to_string())?;
        }
        run_concrete(
            &ConcreteConfig { output_dir: Some(d.path().join("concrete")), ..ConcreteConfig::default() },
            &data,
        )
        .map_err(|e| e.to_string())?;
        run_diagram(&DiagramConfig { output_dir: Some(d.path().join("diagram")), ..DiagramConfig::default() }, &y, &f)
            .map_err(|e| e.to_string())?;
    }
    let a = common::snapshot(dirs[0].path());
    let b = common::snapshot(dirs[1].path());
    ensure!(a.len() == b.len(), "file lists differ");
    let differing: Vec<&String> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| &x.0).collect();
    ensure!(differing.is_empty(), "files differ: {differing:?}");
    Ok(format!("{} files byte-identical across two runs", a.len()))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("({})", parts.join(", "))
}
