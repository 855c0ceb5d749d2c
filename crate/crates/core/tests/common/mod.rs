//! Oracles and generators shared by the integration tests. Nothing here calls
//! into the solver or the aggregators.
#![allow(dead_code)]

use extremize::pif::{InformationStructure, Overlap};
use extremize::ForecastPanel;
use rand::Rng;

/// Forecaster `j` observes an interval of `[0, 1]` of length `delta_j`, so
/// every overlap is an interval intersection and the structure is valid by
/// construction.
pub fn interval_structure<R: Rng>(rng: &mut R, n: usize) -> InformationStructure {
    let intervals: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let len = rng.random_range(0.05..0.95);
            let start = rng.random_range(0.0..(1.0 - len));
            (start, start + len)
        })
        .collect();
    let delta: Vec<f64> = intervals.iter().map(|(a, b)| b - a).collect();
    let rho: Vec<Vec<f64>> = intervals
        .iter()
        .map(|&(a1, b1)| {
            intervals
                .iter()
                .map(|&(a2, b2)| (b1.min(b2) - a1.max(a2)).max(0.0))
                .collect()
        })
        .collect();
    InformationStructure::new(delta, Overlap::Matrix(rho)).expect("interval structures are valid")
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn mse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// Rows of the design `(1, x_1k, ..., x_Nk)` for every problem `k`.
pub fn design_rows(p: &ForecastPanel) -> Vec<Vec<f64>> {
    let f = p.forecasts();
    (0..p.n_problems())
        .map(|k| std::iter::once(1.0).chain((0..p.n_forecasters()).map(|j| f[(j, k)])).collect())
        .collect()
}

/// Mean squared residual of `y` on `rows * b`.
pub fn design_loss(rows: &[Vec<f64>], y: &[f64], b: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(r, yk)| (yk - r.iter().zip(b).map(|(a, c)| a * c).sum::<f64>()).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

/// Accelerated projected gradient (FISTA with adaptive restart) for
/// `min (1/K) |y - D b|^2` subject to `b_i >= 0` where `nonneg[i]`.
/// Returns the minimizer and its loss.
pub fn projected_gradient(rows: &[Vec<f64>], y: &[f64], nonneg: &[bool]) -> (Vec<f64>, f64) {
    let d = nonneg.len();
    let k = y.len() as f64;
    let mut g = vec![vec![0.0; d]; d];
    let mut h = vec![0.0; d];
    for (r, yk) in rows.iter().zip(y) {
        for i in 0..d {
            h[i] += 2.0 * r[i] * yk / k;
            for j in 0..d {
                g[i][j] += 2.0 * r[i] * r[j] / k;
            }
        }
    }
    let lipschitz = power_iteration(&g);
    let step = 1.0 / lipschitz;
    let grad = |b: &[f64]| -> Vec<f64> {
        (0..d).map(|i| (0..d).map(|j| g[i][j] * b[j]).sum::<f64>() - h[i]).collect()
    };
    let project = |b: &mut [f64]| {
        for i in 0..d {
            if nonneg[i] && b[i] < 0.0 {
                b[i] = 0.0;
            }
        }
    };
    let mut x = vec![0.0; d];
    let mut z = x.clone();
    let mut t: f64 = 1.0;
    for _ in 0..400_000 {
        let gz = grad(&z);
        let mut next: Vec<f64> = z.iter().zip(&gz).map(|(a, b)| a - step * b).collect();
        project(&mut next);
        let moved: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let restart = gz.iter().zip(next.iter().zip(&x)).map(|(g, (n, o))| g * (n - o)).sum::<f64>() > 0.0;
        if restart {
            z = next.clone();
            t = 1.0;
        } else {
            z = (0..d).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - x[i])).collect();
            t = t_next;
        }
        x = next;
        if moved < 1e-15 {
            break;
        }
    }
    let loss = design_loss(rows, y, &x);
    (x, loss)
}

fn power_iteration(g: &[Vec<f64>]) -> f64 {
    let d = g.len();
    let mut v = vec![1.0; d];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| g[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    lambda * 1.01
}

/// Exhaustive active-set enumeration for `min 0.5 x'Qx + c'x`, `x_i >= 0`
/// where `nonneg[i]`: solves the stationarity system on every free subset
/// by Gaussian elimination and keeps the best feasible candidate.
pub fn enumerate_bound_qp(q: &[Vec<f64>], c: &[f64], nonneg: &[bool]) -> (Vec<f64>, f64) {
    let d = c.len();
    let bounded: Vec<usize> = (0..d).filter(|&i| nonneg[i]).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 0u32..(1 << bounded.len()) {
        let fixed: Vec<usize> = bounded
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &i)| i)
            .collect();
        let free: Vec<usize> = (0..d).filter(|i| !fixed.contains(i)).collect();
        let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| q[i][j]).collect()).collect();
        let rhs: Vec<f64> = free.iter().map(|&i| -c[i]).collect();
        let Some(sol) = gauss_solve(a, rhs) else { continue };
        let mut x = vec![0.0; d];
        for (s, &i) in sol.iter().zip(&free) {
            x[i] = *s;
        }
        if bounded.iter().any(|&i| x[i] < -1e-12) {
            continue;
        }
        let obj = 0.5 * (0..d).map(|i| (0..d).map(|j| x[i] * q[i][j] * x[j]).sum::<f64>()).sum::<f64>()
            + (0..d).map(|i| c[i] * x[i]).sum::<f64>();
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((x, obj));
        }
    }
    best.expect("the all-fixed point is always feasible")
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for cc in col..n {
                a[r][cc] -= f * a[col][cc];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Header row in the layout of the public concrete dataset.
pub const CONCRETE_HEADER: &str = "Cement (component 1)(kg in a m^3 mixture),\
Blast Furnace Slag (component 2)(kg in a m^3 mixture),\
Fly Ash (component 3)(kg in a m^3 mixture),\
Water  (component 4)(kg in a m^3 mixture),\
Superplasticizer (component 5)(kg in a m^3 mixture),\
Coarse Aggregate  (component 6)(kg in a m^3 mixture),\
Fine Aggregate (component 7)(kg in a m^3 mixture),\
Age (day),\
\"Concrete compressive strength(MPa, megapascals)\"";

/// A concrete-like CSV: plausible ingredient ranges and a strength that is
/// linear in the mix plus Gaussian noise.
pub fn synthetic_concrete_csv<R: Rng>(rng: &mut R, rows: usize) -> String {
    use rand_distr::{Distribution, StandardNormal};
    let mut out = String::from(CONCRETE_HEADER);
    out.push('\n');
    for _ in 0..rows {
        let cement = rng.random_range(100.0..540.0);
        let slag = rng.random_range(0.0..360.0);
        let ash = rng.random_range(0.0..200.0);
        let water = rng.random_range(120.0..250.0);
        let sp = rng.random_range(0.0..32.0);
        let coarse = rng.random_range(800.0..1150.0);
        let fine = rng.random_range(590.0..990.0);
        let age = [3.0, 7.0, 28.0, 56.0, 90.0, 180.0][rng.random_range(0..6)];
        let noise: f64 = StandardNormal.sample(rng);
        let y = 0.11 * cement + 0.09 * slag + 0.07 * ash - 0.2 * water + 0.3 * sp + 0.012 * coarse
            + 0.015 * fine
            + 0.1 * age
            - 10.0
            + 6.0 * noise;
        out.push_str(&format!(
            "{cement:.1},{slag:.1},{ash:.1},{water:.1},{sp:.1},{coarse:.1},{fine:.1},{age},{y:.4}\n"
        ));
    }
    out
}

/// Relative path and bytes of every file under `dir`, sorted.
pub fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Panics with the names of the files that differ between two output trees.
pub fn assert_same_tree(a: &std::path::Path, b: &std::path::Path) {
    let (sa, sb) = (snapshot(a), snapshot(b));
    let names = |s: &[(String, Vec<u8>)]| s.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    assert_eq!(names(&sa), names(&sb));
    let differing: Vec<&String> = sa.iter().zip(&sb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| &x.0).collect();
    assert!(differing.is_empty(), "files differ: {differing:?}");
}
