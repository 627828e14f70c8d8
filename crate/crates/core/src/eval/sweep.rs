//! W1 against the training-set size, with the sample-size-dependent `σ_min`.

use serde::{Deserialize, Serialize};

use super::{sigma_min_of_n, w1, Estimator, W1Report};
use crate::error::{Error, Result};
use crate::field::MarginalField;
use crate::flow::{push_samples, IntegratorConfig};
use crate::lipschitz::loglog_slope;
use crate::nn::{train, TrainConfig};
use crate::rng::{indexed_stream, stream};
use crate::schedules::VarianceSchedule;
use crate::targets::TargetModel;

fn default_m() -> usize {
    2000
}
fn default_n_proj() -> usize {
    64
}
fn default_alpha() -> f64 {
    1.0
}
fn default_eta() -> f64 {
    1.0
}
fn default_is_samples() -> usize {
    1000
}

/// How generated samples are compared with the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples per side.
    #[serde(default = "default_m")]
    pub m: usize,
    /// `None` picks exact-1d, assignment or sliced from the dimension and `m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
    #[serde(default = "default_n_proj")]
    pub n_proj: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            m: default_m(),
            estimator: None,
            n_proj: default_n_proj(),
        }
    }
}

impl EvalConfig {
    pub fn estimator_for(&self, d: usize) -> Estimator {
        self.estimator.unwrap_or_else(|| Estimator::auto(d, self.m))
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_proj == 0 {
            return Err(Error::Config("eval.m and eval.n_proj must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which velocity field the sweep pushes samples through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepArm {
    /// Train a network on `n` samples.
    #[default]
    Trained,
    /// Skip training and use the exact marginal field at `σ_min(n)`.
    ExactControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub arm: SweepArm,
    /// Importance draws for the exact-control arm on perturbed targets.
    #[serde(default = "default_is_samples")]
    pub is_samples: usize,
}

impl SweepConfig {
    pub fn new(n_grid: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            n_grid,
            seeds,
            alpha: default_alpha(),
            eta: default_eta(),
            arm: SweepArm::Trained,
            is_samples: default_is_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sweep.n_grid must be non-empty and strictly increasing".into()));
        }
        if self.n_grid[0] < 2 {
            return Err(Error::Config("sweep.n_grid entries must be >= 2".into()));
        }
        if self.seeds.len() < 2 {
            return Err(Error::Config("sweep.seeds needs at least two seeds".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.eta >= 0.0) {
            return Err(Error::Config("sweep.alpha must lie in (0, 1] and sweep.eta be >= 0".into()));
        }
        Ok(())
    }
}

/// `-(1+α)/(d + 4α + 5 + η)`.
pub fn reference_slope(d: usize, alpha: f64, eta: f64) -> f64 {
    -(1.0 + alpha) / (d as f64 + 4.0 * alpha + 5.0 + eta)
}

/// One `(n, seed)` cell; `w1` is `None` when the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub sigma_min: f64,
    pub seed: u64,
    pub w1: Option<W1Report>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub n: usize,
    pub sigma_min: f64,
    pub median: f64,
    pub iqr: f64,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
    /// Least-squares slope of `log median` against `log n`.
    pub fitted_slope: Option<f64>,
    pub reference_slope: f64,
}

impl SweepReport {
    /// `median_{k+1} ≤ median_k + max(iqr_k, iqr_{k+1})` for consecutive n.
    pub fn non_increasing_within_iqr(&self) -> bool {
        self.summaries.windows(2).all(|w| {
            w[0].median.is_finite()
                && w[1].median.is_finite()
                && w[1].median <= w[0].median + w[0].iqr.max(w[1].iqr)
        })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Run the sweep over `n_grid × seeds`.
///
/// Per seed, one pool of `max(n_grid)` training points is drawn and each cell
/// trains on its first `n` rows. Every cell evaluates against a fresh held-out
/// target sample of size `eval.m`. Failed cells are recorded, not fatal.
#[allow(clippy::too_many_arguments)]
pub fn rate_sweep(
    target: &TargetModel,
    schedule: &VarianceSchedule,
    sweep: &SweepConfig,
    train_cfg: &TrainConfig,
    integrator: &IntegratorConfig,
    eval: &EvalConfig,
) -> Result<SweepReport> {
    sweep.validate()?;
    eval.validate()?;
    let d = target.dim();
    let n_max = *sweep.n_grid.last().expect("validated non-empty");
    let estimator = eval.estimator_for(d);
    let mut rows = Vec::new();
    for &seed in &sweep.seeds {
        let pool = target.sample(&mut stream(seed, "sweep-data"), n_max);
        for &n in &sweep.n_grid {
            let sigma_min = sigma_min_of_n(n as f64, d, sweep.alpha, sweep.eta)?;
            let cell = || -> Result<W1Report> {
                let sched = schedule.with_sigma_min(sigma_min)?;
                let mut latent = indexed_stream(seed, "sweep-latent", n as u64);
                let generated = match sweep.arm {
                    SweepArm::Trained => {
                        let mut cfg = train_cfg.clone();
                        cfg.n = n;
                        cfg.batch = cfg.batch.min(n);
                        cfg.sigma_min = Some(sigma_min);
                        cfg.seed = seed;
                        let data = pool.select(&(0..n).collect::<Vec<_>>());
                        let out = train(&data, &cfg, &sched, target.perturbation_bound())?;
                        push_samples(&out.net, &mut latent, eval.m, integrator)?
                    }
                    SweepArm::ExactControl => {
                        let field = MarginalField::new(sched, target.clone(), sweep.is_samples, seed)?;
                        push_samples(&field, &mut latent, eval.m, integrator)?
                    }
                };
                let held_out = target.sample(&mut indexed_stream(seed, "sweep-holdout", n as u64), eval.m);
                let mut proj = indexed_stream(seed, "sweep-projections", n as u64);
                let mut r = w1(&generated, &held_out, estimator, eval.n_proj, &mut proj)?;
                r.seed = Some(seed);
                Ok(r)
            };
            let (w1, failure) = match cell() {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(SweepRow {
                n,
                sigma_min,
                seed,
                w1,
                failure,
            });
        }
    }
    let mut summaries = Vec::new();
    for &n in &sweep.n_grid {
        let mut vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| r.w1.as_ref().map(|w| w.value))
            .collect();
        vals.sort_by(f64::total_cmp);
        summaries.push(SweepSummary {
            n,
            sigma_min: sigma_min_of_n(n as f64, d, sweep.alpha, sweep.eta)?,
            median: quantile(&vals, 0.5),
            iqr: quantile(&vals, 0.75) - quantile(&vals, 0.25),
            completed: vals.len(),
        });
    }
    let ns: Vec<f64> = summaries.iter().map(|s| s.n as f64).collect();
    let meds: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    Ok(SweepReport {
        fitted_slope: loglog_slope(&ns, &meds),
        reference_slope: reference_slope(d, sweep.alpha, sweep.eta),
        rows,
        summaries,
    })
}
