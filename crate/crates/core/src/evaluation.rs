//! Scoring: average quadratic loss, its reliability / resolution /
//! uncertainty decomposition, and equal-count reliability diagrams.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_BOOTSTRAP: usize = 1000;
const HISTOGRAM_BINS: usize = 20;
const LOWER_QUANTILE: f64 = 0.025;
const UPPER_QUANTILE: f64 = 0.975;

/// `(1/K) sum (y_k - f_k)^2`.
pub fn quadratic_loss(y: &[f64], f: &[f64]) -> Result<f64> {
    check_pair(y, f)?;
    Ok(y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Unbiased sample variance.
pub fn sample_variance(f: &[f64]) -> Result<f64> {
    if f.len() < 2 {
        return Err(Error::TooFewPoints { required: 2, got: f.len() });
    }
    let m = mean(f);
    Ok(f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (f.len() - 1) as f64)
}

/// How forecasts are grouped for the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per distinct forecast value; the identity is exact.
    Exact,
    /// Sorted pairs cut into this many bins of (nearly) equal size.
    EqualCount(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub loss: f64,
    pub rel: f64,
    pub res: f64,
    pub unc: f64,
    /// `|loss - (rel - res + unc)|`; zero up to rounding for exact grouping.
    pub identity_residual: f64,
    pub n_groups: usize,
    pub binned: bool,
}

/// Splits the loss into `REL - RES + UNC`.
///
/// Under [`Grouping::EqualCount`] each bin is represented by its mean
/// forecast, so the identity holds only approximately and the gap is
/// reported in `identity_residual`.
pub fn decompose(y: &[f64], f: &[f64], grouping: Grouping) -> Result<DecompositionResult> {
    check_pair(y, f)?;
    let k = y.len();
    let loss = quadratic_loss(y, f)?;
    let y_bar = mean(y);
    let unc = y.iter().map(|v| (v - y_bar).powi(2)).sum::<f64>() / k as f64;

    let order = sorted_order(y, f);
    let groups: Vec<&[usize]> = match grouping {
        Grouping::Exact => order
            .chunk_by(|&a, &b| f[a].total_cmp(&f[b]).is_eq())
            .collect(),
        Grouping::EqualCount(n_bins) => {
            check_bins(n_bins, k)?;
            bin_ranges(k, n_bins).map(|r| &order[r]).collect()
        }
    };

    let (mut rel, mut res) = (0.0, 0.0);
    for g in &groups {
        let size = g.len() as f64;
        let f_i = g.iter().map(|&i| f[i]).sum::<f64>() / size;
        let y_i = g.iter().map(|&i| y[i]).sum::<f64>() / size;
        let f_i = match grouping {
            // All members share the value exactly; avoid averaging round-off.
            Grouping::Exact => f[g[0]],
            Grouping::EqualCount(_) => f_i,
        };
        rel += size * (f_i - y_i).powi(2);
        res += size * (y_i - y_bar).powi(2);
    }
    rel /= k as f64;
    res /= k as f64;
    Ok(DecompositionResult {
        loss,
        rel,
        res,
        unc,
        identity_residual: (loss - (rel - res + unc)).abs(),
        n_groups: groups.len(),
        binned: matches!(grouping, Grouping::EqualCount(_)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramBin {
    pub mean_forecast: f64,
    pub mean_outcome: f64,
    pub count: usize,
    /// Bootstrap band for `mean_outcome`.
    pub lo: f64,
    pub hi: f64,
    /// Bootstrap band for `mean_forecast`.
    pub forecast_lo: f64,
    pub forecast_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub bins: Vec<DiagramBin>,
    /// Mean outcome, drawn as the reference line.
    pub marginal_mean: f64,
    pub histogram: Histogram,
    pub n_bins: usize,
    pub bootstrap_b: usize,
    pub seed: u64,
}

/// Equal-count reliability diagram with a percentile bootstrap envelope.
///
/// Pairs are sorted by forecast (ties by outcome) and cut by rank
/// into `n_bins` bins whose sizes differ by at most one. Replicate `b`
/// resamples pairs with replacement from substream `b` of `seed`, so the
/// envelope does not depend on the order replicates are computed in. Bands
/// are the 2.5% and 97.5% replicate quantiles, widened if needed to contain
/// the point estimate.
pub fn reliability_diagram(
    y: &[f64],
    f: &[f64],
    n_bins: usize,
    bootstrap_b: usize,
    seed: u64,
) -> Result<ReliabilityDiagram> {
    check_pair(y, f)?;
    let k = y.len();
    if n_bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {n_bins}")));
    }
    check_bins(n_bins, k)?;
    let order = sorted_order(y, f);
    let sorted_f: Vec<f64> = order.iter().map(|&i| f[i]).collect();
    let sorted_y: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let point: Vec<(f64, f64, usize)> = bin_ranges(k, n_bins)
        .map(|r| {
            let len = r.len();
            (mean(&sorted_f[r.clone()]), mean(&sorted_y[r]), len)
        })
        .collect();

    let mut rep_f = vec![Vec::with_capacity(bootstrap_b); n_bins];
    let mut rep_y = vec![Vec::with_capacity(bootstrap_b); n_bins];
    let mut multiplicity = vec![0u32; k];
    for b in 0..bootstrap_b {
        let mut rng = rng::substream(seed, b as u64);
        multiplicity.iter_mut().for_each(|m| *m = 0);
        for _ in 0..k {
            multiplicity[rng.random_range(0..k)] += 1;
        }
        // Walking ranks in order yields the resample already sorted by forecast.
        let mut ranks = multiplicity
            .iter()
            .enumerate()
            .flat_map(|(r, &m)| std::iter::repeat_n(r, m as usize));
        for (bin, range) in bin_ranges(k, n_bins).enumerate() {
            let (mut sf, mut sy) = (0.0, 0.0);
            for r in ranks.by_ref().take(range.len()) {
                sf += sorted_f[r];
                sy += sorted_y[r];
            }
            rep_f[bin].push(sf / range.len() as f64);
            rep_y[bin].push(sy / range.len() as f64);
        }
    }

    let bins = point
        .iter()
        .enumerate()
        .map(|(bin, &(mean_forecast, mean_outcome, count))| {
            let (lo, hi) = band(&mut rep_y[bin], mean_outcome);
            let (forecast_lo, forecast_hi) = band(&mut rep_f[bin], mean_forecast);
            DiagramBin {
                mean_forecast,
                mean_outcome,
                count,
                lo,
                hi,
                forecast_lo,
                forecast_hi,
            }
        })
        .collect();

    Ok(ReliabilityDiagram {
        bins,
        marginal_mean: mean(y),
        histogram: histogram(&sorted_f, HISTOGRAM_BINS),
        n_bins,
        bootstrap_b,
        seed,
    })
}

impl ReliabilityDiagram {
    /// `mean_forecast,mean_outcome,count,lo,hi`
    pub fn write_bins_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mean_forecast", "mean_outcome", "count", "lo", "hi"])?;
        for b in &self.bins {
            w.write_record([
                b.mean_forecast.to_string(),
                b.mean_outcome.to_string(),
                b.count.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `edge_lo,edge_hi,count`
    pub fn write_hist_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["edge_lo", "edge_hi", "count"])?;
        let h = &self.histogram;
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn band(values: &mut [f64], point: f64) -> (f64, f64) {
    if values.is_empty() {
        return (point, point);
    }
    values.sort_by(f64::total_cmp);
    let lo = quantile_sorted(values, LOWER_QUANTILE);
    let hi = quantile_sorted(values, UPPER_QUANTILE);
    (lo.min(point), hi.max(point))
}

/// Linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn histogram(sorted: &[f64], n: usize) -> Histogram {
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    if min == max {
        return Histogram {
            edges: vec![min, max],
            counts: vec![sorted.len()],
        };
    }
    let width = (max - min) / n as f64;
    let edges: Vec<f64> = (0..=n)
        .map(|i| if i == n { max } else { min + width * i as f64 })
        .collect();
    let mut counts = vec![0; n];
    for &v in sorted {
        let idx = (((v - min) / width) as usize).min(n - 1);
        counts[idx] += 1;
    }
    Histogram { edges, counts }
}

/// Rank boundaries of `n_bins` equal-count bins over `k` items.
pub fn bin_ranges(k: usize, n_bins: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n_bins).map(move |b| (b * k / n_bins)..((b + 1) * k / n_bins))
}

/// Ranks by forecast, then outcome; the stable sort leaves only identical
/// pairs in input order, so results depend on the multiset of pairs alone.
fn sorted_order(y: &[f64], f: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(y[a].total_cmp(&y[b])));
    order
}

fn check_pair(y: &[f64], f: &[f64]) -> Result<()> {
    if y.len() != f.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} outcomes but {} forecasts",
            y.len(),
            f.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::TooFewPoints { required: 1, got: 0 });
    }
    Ok(())
}

fn check_bins(n_bins: usize, k: usize) -> Result<()> {
    if n_bins == 0 || n_bins > k {
        return Err(Error::TooManyBins { n_bins, k });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
