//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 7
//! out = "runs/demo"
//!
//! [target]
//! type = "mixture"
//! weights = [0.5, 0.5]
//! means = [[-2.0, 0.0], [2.0, 0.0]]
//! variances = [0.25, 0.25]
//!
//! [schedule]
//! kind = "geometric"
//! sigma_min = 0.01
//!
//! [train]
//! n = 5000
//! ```
//!
//! Unknown keys are rejected. Semantic errors point at the offending line.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{sigma_min_of_n, EvalConfig, SweepConfig};
use crate::flow::{IntegratorConfig, Method};
use crate::nn::TrainConfig;
use crate::schedules::{ScheduleKind, VarianceSchedule};
use crate::targets::{CatalogPerturbation, GaussianMixture, PerturbedGaussian, TargetModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetSpec {
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        /// Full covariance matrices, one per component.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariances: Option<Vec<Vec<Vec<f64>>>>,
        /// Isotropic variances, one per component (alternative to `covariances`).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variances: Option<Vec<f64>>,
    },
    Perturbed {
        dim: usize,
        perturbation: String,
        amplitude: f64,
    },
}

fn default_gamma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: String,
    /// Omitted: derived from `train.n` through the sample-size rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Polynomial coefficients `c_0 = 1, …` for `kind = "poly"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: "geometric".into(),
            sigma_min: None,
            gamma: 1.0,
            coeffs: None,
        }
    }
}

fn default_steps() -> usize {
    crate::flow::DEFAULT_STEPS
}
fn default_method() -> String {
    "rk4".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_method")]
    pub method: String,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            method: default_method(),
        }
    }
}

impl IntegratorSpec {
    pub fn build(&self) -> Result<IntegratorConfig> {
        IntegratorConfig::new(self.steps, self.method.parse::<Method>()?)
    }
}

fn default_quad_tol() -> f64 {
    1e-8
}
fn default_grid_probes() -> usize {
    crate::lipschitz::DEFAULT_GRID_PROBES
}
fn default_sample_probes() -> usize {
    crate::lipschitz::DEFAULT_SAMPLE_PROBES
}
fn default_t_points() -> usize {
    crate::lipschitz::DEFAULT_T_POINTS
}
fn default_is_samples() -> usize {
    2000
}
fn default_pairs() -> usize {
    10_000
}

/// Settings for the schedule audit, field probes and Lipschitz scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
    #[serde(default = "default_grid_probes")]
    pub grid_probes: usize,
    #[serde(default = "default_sample_probes")]
    pub sample_probes: usize,
    #[serde(default = "default_t_points")]
    pub t_points: usize,
    /// Importance draws per moment estimate for perturbed targets.
    #[serde(default = "default_is_samples")]
    pub is_samples: usize,
    /// Empirical Lipschitz pairs per t (0 disables the empirical column).
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Regime boundary of the covariance audit; omitted: `σ_{t*} = 1/2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tstar: Option<f64>,
    /// Probe times for `field-probe`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probe_t: Vec<f64>,
    /// Probe points for `field-probe`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probe_x: Vec<Vec<f64>>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            quad_tol: default_quad_tol(),
            grid_probes: default_grid_probes(),
            sample_probes: default_sample_probes(),
            t_points: default_t_points(),
            is_samples: default_is_samples(),
            pairs: default_pairs(),
            tstar: None,
            probe_t: Vec::new(),
            probe_x: Vec::new(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_train() -> TrainConfig {
    TrainConfig::new(5000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub target: TargetSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// A validation failure tied to a config key.
struct KeyError {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn key_err(section: &'static str, key: &'static str, message: impl Into<String>) -> KeyError {
    KeyError {
        section,
        key,
        message: message.into(),
    }
}

/// 1-based line of `key = …` inside `[section]` (top level when `section` is empty).
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, line) in src.lines().enumerate() {
        let l = line.trim();
        if l.starts_with('[') {
            current = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = l.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

impl ExperimentConfig {
    /// A minimal config for `target`, everything else at defaults.
    pub fn with_target(target: TargetSpec) -> Self {
        Self {
            seed: 0,
            out: default_out(),
            target,
            schedule: ScheduleSpec::default(),
            train: default_train(),
            integrator: IntegratorSpec::default(),
            eval: EvalConfig::default(),
            diagnostics: DiagnosticsSpec::default(),
            sweep: None,
        }
    }

    /// Parse and validate; errors carry the line number where possible.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Err(k) = cfg.check() {
            let place = match locate(src, k.section, k.key) {
                Some(line) => format!("line {line}: "),
                None => String::new(),
            };
            let name = if k.section.is_empty() {
                k.key.to_string()
            } else {
                format!("{}.{}", k.section, k.key)
            };
            return Err(Error::Config(format!("invalid config: {place}{name}: {}", k.message)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// SHA-256 of the canonical serialisation, as lowercase hex. The output
    /// directory is excluded.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|k| Error::Config(format!("invalid config: {}.{}: {}", k.section, k.key, k.message)))
    }

    fn check(&self) -> std::result::Result<(), KeyError> {
        self.build_target()
            .map_err(|e| key_err("target", self.target_key(), e.to_string()))?;
        let s = &self.schedule;
        if let Some(v) = s.sigma_min {
            if !(v > 0.0 && v < 1.0) {
                return Err(key_err("schedule", "sigma_min", format!("{v} is outside (0, 1)")));
            }
        }
        if !(s.gamma >= 1.0) {
            return Err(key_err("schedule", "gamma", format!("{} must be >= 1", s.gamma)));
        }
        self.build_schedule()
            .map_err(|e| key_err("schedule", "kind", e.to_string()))?;
        if self.train.batch > self.train.n {
            return Err(key_err(
                "train",
                "batch",
                format!("batch {} exceeds n = {}", self.train.batch, self.train.n),
            ));
        }
        self.train.validate().map_err(|e| key_err("train", "n", e.to_string()))?;
        self.integrator
            .build()
            .map_err(|e| key_err("integrator", "steps", e.to_string()))?;
        self.eval.validate().map_err(|e| key_err("eval", "m", e.to_string()))?;
        let dg = &self.diagnostics;
        if !(dg.quad_tol > 0.0) {
            return Err(key_err("diagnostics", "quad_tol", "must be positive"));
        }
        if dg.t_points < 2 {
            return Err(key_err("diagnostics", "t_points", "must be >= 2"));
        }
        if dg.grid_probes + dg.sample_probes == 0 {
            return Err(key_err("diagnostics", "grid_probes", "probe set would be empty"));
        }
        if dg.probe_t.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(key_err("diagnostics", "probe_t", "times must lie in [0, 1]"));
        }
        let d = self.dim();
        if dg.probe_x.iter().any(|x| x.len() != d) {
            return Err(key_err("diagnostics", "probe_x", format!("points must have dimension {d}")));
        }
        if let Some(sw) = &self.sweep {
            sw.validate().map_err(|e| key_err("sweep", "n_grid", e.to_string()))?;
        }
        // u64 seeds above i64::MAX have no TOML representation.
        if self.seed > i64::MAX as u64 {
            return Err(key_err("", "seed", "must be below 2^63"));
        }
        Ok(())
    }

    fn target_key(&self) -> &'static str {
        match &self.target {
            TargetSpec::Mixture { .. } => "weights",
            TargetSpec::Perturbed { .. } => "perturbation",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.target {
            TargetSpec::Mixture { means, .. } => means.first().map_or(0, Vec::len),
            TargetSpec::Perturbed { dim, .. } => *dim,
        }
    }

    pub fn build_target(&self) -> Result<TargetModel> {
        match &self.target {
            TargetSpec::Mixture {
                weights,
                means,
                covariances,
                variances,
            } => {
                let mix = match (covariances, variances) {
                    (Some(c), None) => {
                        let covs = c
                            .iter()
                            .map(|rows| {
                                let d = rows.len();
                                if rows.iter().any(|r| r.len() != d) {
                                    return Err(Error::InvalidTarget("covariance matrices must be square".into()));
                                }
                                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        GaussianMixture::new(weights.clone(), means.clone(), covs)?
                    }
                    (None, Some(v)) => GaussianMixture::isotropic(weights.clone(), means.clone(), v.clone())?,
                    _ => {
                        return Err(Error::InvalidTarget(
                            "give exactly one of 'covariances' or 'variances'".into(),
                        ))
                    }
                };
                Ok(TargetModel::Mixture(mix))
            }
            TargetSpec::Perturbed {
                dim,
                perturbation,
                amplitude,
            } => {
                let p = CatalogPerturbation::from_name(perturbation, *amplitude).ok_or_else(|| {
                    Error::InvalidTarget(format!(
                        "unknown perturbation '{perturbation}' (expected zero, sin, cos-sum or bump)"
                    ))
                })?;
                Ok(TargetModel::Perturbed(PerturbedGaussian::from_catalog(*dim, p)?))
            }
        }
    }

    /// `σ_min` from the schedule, else from `train.n` with `α = 1`, `η = 1`
    /// (or the sweep's values when present).
    pub fn sigma_min(&self) -> Result<f64> {
        if let Some(s) = self.schedule.sigma_min {
            return Ok(s);
        }
        if let Some(c) = &self.schedule.coeffs {
            return Ok(c.iter().sum());
        }
        let (alpha, eta) = self.sweep.as_ref().map_or((1.0, 1.0), |s| (s.alpha, s.eta));
        sigma_min_of_n(self.train.n.max(2) as f64, self.dim(), alpha, eta)
    }

    pub fn build_schedule(&self) -> Result<VarianceSchedule> {
        let s = &self.schedule;
        let kind = match s.kind.as_str() {
            "geometric" => ScheduleKind::Geometric,
            "linear" => ScheduleKind::Linear,
            "poly" => ScheduleKind::Poly(
                s.coeffs
                    .clone()
                    .ok_or_else(|| Error::InvalidSchedule("kind 'poly' needs 'coeffs'".into()))?,
            ),
            other => {
                return Err(Error::InvalidSchedule(format!(
                    "unknown kind '{other}' (expected geometric, linear or poly)"
                )))
            }
        };
        if !matches!(kind, ScheduleKind::Poly(_)) && s.coeffs.is_some() {
            return Err(Error::InvalidSchedule("'coeffs' only applies to kind 'poly'".into()));
        }
        VarianceSchedule::new(kind, self.sigma_min()?, s.gamma)
    }

    pub fn build_integrator(&self) -> Result<IntegratorConfig> {
        self.integrator.build()
    }
}
