//! Empirical Wasserstein-1 distances and the sample-size sweep.

mod assignment;
mod sweep;

pub use sweep::{
    rate_sweep, reference_slope, EvalConfig, SweepArm, SweepConfig, SweepReport, SweepRow, SweepSummary,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, ordered_sum};
use crate::rng::unit_direction;
use crate::samples::Samples;

/// Largest sample size accepted by the exact assignment estimator.
pub const ASSIGNMENT_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "exact-1d")]
    Exact1d,
    #[serde(rename = "assignment")]
    Assignment,
    #[serde(rename = "sliced")]
    Sliced,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Exact1d => "exact-1d",
            Estimator::Assignment => "assignment",
            Estimator::Sliced => "sliced",
        }
    }

    /// Exact 1D in one dimension, assignment up to the cap, sliced beyond.
    pub fn auto(d: usize, m: usize) -> Self {
        if d == 1 {
            Estimator::Exact1d
        } else if m <= ASSIGNMENT_CAP {
            Estimator::Assignment
        } else {
            Estimator::Sliced
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-1d" => Ok(Estimator::Exact1d),
            "assignment" => Ok(Estimator::Assignment),
            "sliced" => Ok(Estimator::Sliced),
            other => Err(Error::Config(format!(
                "unknown estimator '{other}' (expected exact-1d, assignment or sliced)"
            ))),
        }
    }
}

/// One W1 estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct W1Report {
    pub estimator: Estimator,
    pub value: f64,
    /// Monte Carlo standard error over projections (sliced only).
    pub se: Option<f64>,
    pub m: usize,
    pub n_proj: Option<usize>,
    pub seed: Option<u64>,
}

fn check_sizes(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::SizeMismatch(format!("sample sizes differ: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Domain("empty sample".into()));
    }
    Ok(())
}

/// Mean absolute difference of sorted order statistics.
///
/// Both exact estimators add the matched costs in ascending order, so they
/// agree bit for bit whenever they find the same matching.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sizes(a.len(), b.len())?;
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    Ok(ordered_sum(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).collect()) / a.len() as f64)
}

/// Exact empirical W1 via optimal assignment under Euclidean cost.
pub fn w1_assignment(a: &Samples, b: &Samples) -> Result<f64> {
    w1_assignment_capped(a, b, ASSIGNMENT_CAP)
}

pub fn w1_assignment_capped(a: &Samples, b: &Samples, cap: usize) -> Result<f64> {
    check_sizes(a.len(), b.len())?;
    if a.dim() != b.dim() {
        return Err(Error::SizeMismatch(format!("dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let m = a.len();
    if m > cap {
        return Err(Error::OverCap { m, cap });
    }
    let mut cost = Vec::with_capacity(m * m);
    for x in a.rows() {
        for y in b.rows() {
            cost.push(dist(x, y));
        }
    }
    let assign = assignment::solve(&cost, m);
    if a.dim() == 1 {
        return Ok(uncrossed_1d(a.as_slice(), b.as_slice(), &assign));
    }
    let total = ordered_sum(assign.iter().enumerate().map(|(r, &c)| cost[r * m + c]).collect());
    Ok(total / m as f64)
}

// On the line, optimal matchings differ only by swaps of nested pairs with
// equal total cost; the monotone one is chosen so rounding is canonical.
fn uncrossed_1d(a: &[f64], b: &[f64], assign: &[usize]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = assign.iter().enumerate().map(|(r, &c)| (a[r], b[c])).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut matched: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    matched.sort_by(f64::total_cmp);
    let costs = pairs.iter().zip(&matched).map(|(p, y)| (p.0 - y).abs()).collect();
    ordered_sum(costs) / a.len() as f64
}

/// Sliced W1: average of 1D distances along uniformly random directions.
/// Returns the value and its standard error over projections.
pub fn sliced_w1<R: Rng + ?Sized>(a: &Samples, b: &Samples, n_proj: usize, rng: &mut R) -> Result<(f64, f64)> {
    check_sizes(a.len(), b.len())?;
    if a.dim() != b.dim() {
        return Err(Error::SizeMismatch(format!("dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    if n_proj == 0 {
        return Err(Error::Domain("n_proj must be >= 1".into()));
    }
    let d = a.dim();
    let project = |s: &Samples, u: &[f64]| -> Vec<f64> {
        s.rows().map(|r| r.iter().zip(u).map(|(x, y)| x * y).sum()).collect()
    };
    let mut vals = Vec::with_capacity(n_proj);
    for _ in 0..n_proj {
        let u = unit_direction(rng, d);
        vals.push(w1_1d(&project(a, &u), &project(b, &u))?);
    }
    let k = n_proj as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let se = if n_proj > 1 {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Dispatch to the requested estimator.
pub fn w1<R: Rng + ?Sized>(a: &Samples, b: &Samples, estimator: Estimator, n_proj: usize, rng: &mut R) -> Result<W1Report> {
    let m = a.len();
    let (value, se, n_proj) = match estimator {
        Estimator::Exact1d => {
            if a.dim() != 1 || b.dim() != 1 {
                return Err(Error::Domain("exact-1d estimator needs one-dimensional samples".into()));
            }
            (w1_1d(a.as_slice(), b.as_slice())?, None, None)
        }
        Estimator::Assignment => (w1_assignment(a, b)?, None, None),
        Estimator::Sliced => {
            let (v, se) = sliced_w1(a, b, n_proj, rng)?;
            (v, Some(se), Some(n_proj))
        }
    };
    Ok(W1Report {
        estimator,
        value,
        se,
        m,
        n_proj,
        seed: None,
    })
}

/// `n^{-1/((d+1) + 4α + 4 + η)}`.
pub fn sigma_min_of_n(n: f64, d: usize, alpha: f64, eta: f64) -> Result<f64> {
    if !(n >= 2.0) {
        return Err(Error::Domain(format!("n = {n} must be >= 2")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    if !(eta >= 0.0) {
        return Err(Error::Domain(format!("eta = {eta} must be non-negative")));
    }
    let exponent = -1.0 / ((d as f64 + 1.0) + 4.0 * alpha + 4.0 + eta);
    Ok(n.powf(exponent))
}
