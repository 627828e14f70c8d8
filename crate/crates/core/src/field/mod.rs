//! Velocity fields for Gaussian probability paths.
//!
//! With `p_t(x | y) = N(t^γ y, σ_t² I)` the conditional field is
//! `v_t(x | y) = (σ'_t/σ_t)(x - t^γ y) + γ t^{γ-1} y` and the marginal field is
//! its average under the reweighted posterior `Y^{x,t}` with density
//! `q(y) ∝ p_t(x | y) p*(y)`. Because the conditional field is affine in `y`,
//! the marginal field only needs `E[Y^{x,t}]`, and its spatial Jacobian only
//! needs `Cov(Y^{x,t})`:
//!
//! ```text
//! v_t(x)   = (σ'/σ)(x - t^γ E[Y]) + γ t^{γ-1} E[Y]
//! D_x v_t  = (σ'/σ) I + (γ t^{γ-1} - σ' t^γ / σ) (t^γ / σ²) Cov(Y)
//! ```

mod importance;
mod mixture;

pub use importance::{is_posterior_moments, BalancedDraws};
pub use mixture::{mixture_posterior_mean, mixture_posterior_moments, mixture_velocity};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_unit_interval, Error, Result};
use crate::rng::standard_normal_vec;
use crate::schedules::VarianceSchedule;
use crate::targets::TargetModel;

/// How the posterior moments were obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ess {
    Exact,
    Estimated(f64),
}

/// Mean and covariance of `Y^{x,t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ess: Ess,
    /// Standard errors of the covariance entries (estimated moments only).
    pub cov_se: Option<DMatrix<f64>>,
    /// Set when the effective sample size fell below 1% of the draws.
    pub degenerate: bool,
}

impl PosteriorMoments {
    pub fn exact(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            mean,
            cov,
            ess: Ess::Exact,
            cov_se: None,
            degenerate: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// ESS as a number; `+∞` for exact moments.
    pub fn ess_value(&self) -> f64 {
        match self.ess {
            Ess::Exact => f64::INFINITY,
            Ess::Estimated(v) => v,
        }
    }
}

/// Provenance of a velocity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    ExactMixture,
    IsPerturbed,
    Learned,
    Conditional,
    Analytic,
}

/// A time-dependent vector field `(t, x) ↦ v_t(x)` on `[0, 1] × R^d`.
///
/// Evaluation must be deterministic in `(t, x)` and safe to call from several
/// threads at once.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> FieldKind;

    fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64>;

    /// Velocities at a shared time for row-major points `xs` (`n × d`).
    /// Must agree with `velocity` row by row.
    fn velocity_batch(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        xs.chunks(self.dim().max(1)).flat_map(|x| self.velocity(t, x)).collect()
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> FieldKind {
        (**self).kind()
    }
    fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (**self).velocity(t, x)
    }
    fn velocity_batch(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        (**self).velocity_batch(t, xs)
    }
}

impl<F: VelocityField + ?Sized> VelocityField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> FieldKind {
        (**self).kind()
    }
    fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (**self).velocity(t, x)
    }
    fn velocity_batch(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        (**self).velocity_batch(t, xs)
    }
}

/// `v ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField(pub usize);

impl VelocityField for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }
    fn kind(&self) -> FieldKind {
        FieldKind::Analytic
    }
    fn velocity(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

/// Wraps a closure as a field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> FieldKind {
        FieldKind::Analytic
    }
    fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.f)(t, x)
    }
}

/// `v_t(x | y) = (σ'_t/σ_t)(x - t^γ y) + γ t^{γ-1} y`.
pub fn conditional_velocity(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    check_unit_interval(t)?;
    if x.len() != y.len() {
        return Err(Error::SizeMismatch("x and y differ in dimension".into()));
    }
    Ok(conditional_velocity_unchecked(schedule, t, x, y))
}

pub(crate) fn conditional_velocity_unchecked(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Vec<f64> {
    let q = schedule.quotient(t);
    let (a, da) = schedule.mu(t);
    x.iter()
        .zip(y)
        .map(|(xi, yi)| q * (xi - a * yi) + da * yi)
        .collect()
}

/// Draw `X_t ~ N(t^γ y, σ_t² I)`.
pub fn conditional_path_sample<R: Rng + ?Sized>(
    schedule: &VarianceSchedule,
    t: f64,
    y: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_unit_interval(t)?;
    let (s, _) = schedule.eval(t);
    let (a, _) = schedule.mu(t);
    let eps = standard_normal_vec(rng, y.len());
    Ok(y.iter().zip(eps).map(|(yi, e)| a * yi + s * e).collect())
}

/// Marginal velocity from the posterior mean.
pub fn velocity_from_mean(schedule: &VarianceSchedule, t: f64, x: &[f64], mean: &DVector<f64>) -> Vec<f64> {
    conditional_velocity_unchecked(schedule, t, x, mean.as_slice())
}

/// `(σ'/σ) I + (γ t^{γ-1} - σ' t^γ/σ)(t^γ/σ²) Cov(Y^{x,t})`.
pub fn jacobian_from_moments(
    schedule: &VarianceSchedule,
    t: f64,
    moments: &PosteriorMoments,
) -> Result<DMatrix<f64>> {
    check_unit_interval(t)?;
    let d = moments.dim();
    let (q, c) = jacobian_coefficients(schedule, t);
    Ok(DMatrix::identity(d, d) * q + &moments.cov * c)
}

/// `(σ'/σ, (γ t^{γ-1} - σ' t^γ/σ) t^γ/σ²)`: the identity and covariance
/// coefficients of the Jacobian.
pub fn jacobian_coefficients(schedule: &VarianceSchedule, t: f64) -> (f64, f64) {
    let (s, _) = schedule.eval(t);
    let q = schedule.quotient(t);
    let (a, da) = schedule.mu(t);
    (q, (da - q * a) * a / (s * s))
}

/// Default central-difference step `1e-4 (1 + |x|)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-4 * (1.0 + crate::linalg::norm(x))
}

/// Central-difference Jacobian; column `j` is `(v(x + h e_j) - v(x - h e_j)) / 2h`.
pub fn fd_jacobian<F: VelocityField + ?Sized>(field: &F, t: f64, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step h = {h} must be positive")));
    }
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + h;
        let vp = field.velocity(t, &xp);
        xp[j] = x[j] - h;
        let vm = field.velocity(t, &xp);
        xp[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (vp[i] - vm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Conditional field `x ↦ v_t(x | y)` for a fixed endpoint `y`.
#[derive(Debug, Clone)]
pub struct ConditionalField {
    pub schedule: VarianceSchedule,
    pub y: Vec<f64>,
}

impl VelocityField for ConditionalField {
    fn dim(&self) -> usize {
        self.y.len()
    }
    fn kind(&self) -> FieldKind {
        FieldKind::Conditional
    }
    fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        conditional_velocity_unchecked(&self.schedule, t, x, &self.y)
    }
}

/// The marginal field of a target under a schedule.
///
/// Mixture targets use closed-form posterior moments. Perturbed targets use
/// self-normalised importance sampling against a frozen, balanced set of
/// base draws, so the estimated field is a deterministic smooth function of
/// `(t, x)`.
#[derive(Debug, Clone)]
pub struct MarginalField {
    schedule: VarianceSchedule,
    target: TargetModel,
    draws: Option<BalancedDraws>,
}

impl MarginalField {
    pub fn exact(schedule: VarianceSchedule, mixture: crate::targets::GaussianMixture) -> Self {
        Self {
            schedule,
            target: TargetModel::Mixture(mixture),
            draws: None,
        }
    }

    /// `is_samples` and `seed` only matter for perturbed targets.
    pub fn new(schedule: VarianceSchedule, target: TargetModel, is_samples: usize, seed: u64) -> Result<Self> {
        let draws = match &target {
            TargetModel::Mixture(_) => None,
            TargetModel::Perturbed(p) => Some(BalancedDraws::new(
                p.dim(),
                is_samples,
                &mut crate::rng::stream(seed, "importance-draws"),
            )?),
        };
        Ok(Self {
            schedule,
            target,
            draws,
        })
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.schedule
    }

    pub fn target(&self) -> &TargetModel {
        &self.target
    }

    pub fn moments(&self, t: f64, x: &[f64]) -> Result<PosteriorMoments> {
        match (&self.target, &self.draws) {
            (TargetModel::Mixture(m), _) => mixture_posterior_moments(&self.schedule, t, x, m),
            (TargetModel::Perturbed(p), Some(draws)) => {
                check_unit_interval(t)?;
                importance::snis_moments(&self.schedule, t, x, p, draws.as_samples())
            }
            (TargetModel::Perturbed(_), None) => unreachable!("perturbed field without draws"),
        }
    }

    pub fn jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        jacobian_from_moments(&self.schedule, t, &self.moments(t, x)?)
    }
}

impl VelocityField for MarginalField {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn kind(&self) -> FieldKind {
        match self.target {
            TargetModel::Mixture(_) => FieldKind::ExactMixture,
            TargetModel::Perturbed(_) => FieldKind::IsPerturbed,
        }
    }

    fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let t = t.clamp(0.0, 1.0);
        let mean = match (&self.target, &self.draws) {
            (TargetModel::Mixture(m), _) => mixture::mixture_posterior_mean(&self.schedule, t, x, m),
            (TargetModel::Perturbed(p), Some(draws)) => {
                importance::snis_mean(&self.schedule, t, x, p, draws.as_samples())
            }
            (TargetModel::Perturbed(_), None) => unreachable!("perturbed field without draws"),
        };
        match mean {
            Ok(m) => velocity_from_mean(&self.schedule, t, x, &m),
            Err(_) => vec![f64::NAN; x.len()],
        }
    }

    fn velocity_batch(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let t = t.clamp(0.0, 1.0);
        let d = self.dim();
        let TargetModel::Mixture(m) = &self.target else {
            return xs.chunks(d).flat_map(|x| self.velocity(t, x)).collect();
        };
        let Ok(frozen) = mixture::MixtureAtTime::new(&self.schedule, t, m) else {
            return vec![f64::NAN; xs.len()];
        };
        let mut out = Vec::with_capacity(xs.len());
        for x in xs.chunks(d) {
            if x.iter().all(|v| v.is_finite()) {
                out.extend(velocity_from_mean(&self.schedule, t, x, &frozen.mean(x)));
            } else {
                out.extend(std::iter::repeat_n(f64::NAN, d));
            }
        }
        out
    }
}
