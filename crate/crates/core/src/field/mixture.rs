use nalgebra::{Cholesky, DMatrix, DVector};

use super::{velocity_from_mean, PosteriorMoments};
use crate::error::{check_finite, check_unit_interval, Error, Result};
use crate::linalg::{log_sum_exp, psd_floor, symmetrize};
use crate::schedules::VarianceSchedule;
use crate::targets::GaussianMixture;

/// Exact moments of `Y^{x,t}` for a Gaussian-mixture target.
///
/// Component `k` has a Gaussian posterior. With `a = t^γ` and
/// `M_k = a² S_k + σ_t² I` (the covariance of `X_t` given component `k`),
/// the gain `K_k = a S_k M_k^{-1}` gives
/// `mean_k = m_k + K_k (x - a m_k)` and `cov_k = S_k - a K_k S_k`, which equals
/// `(S_k^{-1} + (a²/σ_t²) I)^{-1}`. Responsibilities are proportional to
/// `w_k N(x; a m_k, M_k)` and the components are combined by the law of total
/// covariance.
pub fn mixture_posterior_moments(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    mixture: &GaussianMixture,
) -> Result<PosteriorMoments> {
    check_unit_interval(t)?;
    check_finite(x)?;
    let d = mixture.dim();
    if x.len() != d {
        return Err(Error::SizeMismatch(format!(
            "point has dimension {}, mixture has {d}",
            x.len()
        )));
    }
    let (sigma, _) = schedule.eval(t);
    let (a, _) = schedule.mu(t);
    let xv = DVector::from_column_slice(x);
    let k = mixture.n_components();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    let mut log_r = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let s = &mixture.covariances()[c];
        let m = &mixture.means()[c];
        let big_m = s * (a * a) + DMatrix::identity(d, d) * (sigma * sigma);
        let chol = Cholesky::new(big_m).ok_or_else(|| {
            Error::Domain(format!("marginal covariance of component {c} is singular at t = {t}"))
        })?;
        let resid = &xv - m * a;
        let z = chol.l().solve_lower_triangular(&resid).expect("triangular solve");
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        log_r.push(
            mixture.weights()[c].ln() - 0.5 * (d as f64 * ln2pi + log_det + z.norm_squared()),
        );
        // K = a S M^{-1} = a (M^{-1} S)^T
        let gain = chol.solve(s).transpose() * a;
        means.push(m + &gain * resid);
        covs.push(symmetrize(&(s - &gain * s * a)));
    }
    let lse = log_sum_exp(&log_r);
    let r: Vec<f64> = log_r.iter().map(|l| (l - lse).exp()).collect();

    let mut mean = DVector::zeros(d);
    for (rk, mk) in r.iter().zip(&means) {
        mean += mk * *rk;
    }
    let mut cov = DMatrix::zeros(d, d);
    for ((rk, mk), ck) in r.iter().zip(&means).zip(&covs) {
        let diff = mk - &mean;
        cov += (ck + &diff * diff.transpose()) * *rk;
    }
    let cov = psd_floor(&symmetrize(&cov));
    Ok(PosteriorMoments::exact(mean, cov))
}

/// Per-component factorisations at a fixed time, reused across points.
pub(crate) struct MixtureAtTime<'a> {
    mixture: &'a GaussianMixture,
    a: f64,
    chols: Vec<Cholesky<f64, nalgebra::Dyn>>,
    log_dets: Vec<f64>,
}

impl<'a> MixtureAtTime<'a> {
    pub(crate) fn new(schedule: &VarianceSchedule, t: f64, mixture: &'a GaussianMixture) -> Result<Self> {
        check_unit_interval(t)?;
        let d = mixture.dim();
        let (sigma, _) = schedule.eval(t);
        let (a, _) = schedule.mu(t);
        let mut chols = Vec::with_capacity(mixture.n_components());
        let mut log_dets = Vec::with_capacity(mixture.n_components());
        for (c, s) in mixture.covariances().iter().enumerate() {
            let big_m = s * (a * a) + DMatrix::identity(d, d) * (sigma * sigma);
            let chol = Cholesky::new(big_m).ok_or_else(|| {
                Error::Domain(format!("marginal covariance of component {c} is singular at t = {t}"))
            })?;
            log_dets.push(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>());
            chols.push(chol);
        }
        Ok(Self {
            mixture,
            a,
            chols,
            log_dets,
        })
    }

    pub(crate) fn mean(&self, x: &[f64]) -> DVector<f64> {
        let mix = self.mixture;
        let xv = DVector::from_column_slice(x);
        let k = mix.n_components();
        let mut log_r = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        for c in 0..k {
            let m = &mix.means()[c];
            let resid = &xv - m * self.a;
            let chol = &self.chols[c];
            let z = chol.l_dirty().solve_lower_triangular(&resid).expect("triangular solve");
            log_r.push(mix.weights()[c].ln() - 0.5 * (self.log_dets[c] + z.norm_squared()));
            means.push(m + &mix.covariances()[c] * chol.solve(&resid) * self.a);
        }
        let lse = log_sum_exp(&log_r);
        let mut mean = DVector::zeros(xv.len());
        for (l, mk) in log_r.iter().zip(&means) {
            mean += mk * (l - lse).exp();
        }
        mean
    }
}

/// Posterior mean alone; skips the gain matrices and covariance.
pub fn mixture_posterior_mean(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    mixture: &GaussianMixture,
) -> Result<DVector<f64>> {
    check_finite(x)?;
    let d = mixture.dim();
    if x.len() != d {
        return Err(Error::SizeMismatch(format!(
            "point has dimension {}, mixture has {d}",
            x.len()
        )));
    }
    Ok(MixtureAtTime::new(schedule, t, mixture)?.mean(x))
}

/// Exact marginal velocity of a Gaussian-mixture target.
pub fn mixture_velocity(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    mixture: &GaussianMixture,
) -> Result<Vec<f64>> {
    let mean = mixture_posterior_mean(schedule, t, x, mixture)?;
    Ok(velocity_from_mean(schedule, t, x, &mean))
}
