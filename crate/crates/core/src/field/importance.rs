use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{Ess, PosteriorMoments};
use crate::error::{check_finite, check_unit_interval, Error, Result};
use crate::linalg::{psd_floor, symmetrize};
use crate::rng::standard_normal_vec;
use crate::samples::Samples;
use crate::schedules::VarianceSchedule;
use crate::targets::PerturbedGaussian;

/// Minimum number of importance draws.
pub const MIN_IS_SAMPLES: usize = 100;

/// ESS below this fraction of the draws marks the estimate as degenerate.
pub const DEGENERACY_FRACTION: f64 = 0.01;

/// Standard-normal base draws that are symmetric (`ε` and `-ε` both present)
/// and whitened so their second moment is exactly the identity. Reused for
/// every `(t, x)` they make the estimated field smooth and deterministic.
#[derive(Debug, Clone)]
pub struct BalancedDraws {
    draws: Samples,
}

impl BalancedDraws {
    pub fn new<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Self> {
        if n < MIN_IS_SAMPLES {
            return Err(Error::Domain(format!(
                "need at least {MIN_IS_SAMPLES} importance draws, got {n}"
            )));
        }
        let pairs = n / 2;
        let mut raw = Vec::with_capacity(n * d);
        let mut base = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            base.push(DVector::from_vec(standard_normal_vec(rng, d)));
        }
        // second moment of the symmetric set; the mean is exactly zero
        let mut m2 = DMatrix::zeros(d, d);
        for e in &base {
            m2 += e * e.transpose();
        }
        m2 *= 2.0 / n as f64;
        let chol = m2
            .cholesky()
            .ok_or_else(|| Error::Domain("degenerate base draws".into()))?;
        for e in &base {
            let w = chol.l().solve_lower_triangular(e).expect("triangular solve");
            raw.extend(w.iter().copied());
            raw.extend(w.iter().map(|v| -v));
        }
        if n % 2 == 1 {
            raw.extend(std::iter::repeat_n(0.0, d));
        }
        Ok(Self {
            draws: Samples::new(d, raw)?,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn as_samples(&self) -> &Samples {
        &self.draws
    }
}

/// Self-normalised importance sampling estimate of the moments of `Y^{x,t}`
/// for a perturbed Gaussian target with fresh i.i.d. draws.
///
/// The proposal is the posterior for the unperturbed target,
/// `N(t^γ x / (t^{2γ} + σ_t²), σ_t² / (t^{2γ} + σ_t²) I)`, and the weights are
/// `exp(-a(y))`.
pub fn is_posterior_moments<R: Rng + ?Sized>(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    target: &PerturbedGaussian,
    n_samples: usize,
    rng: &mut R,
) -> Result<PosteriorMoments> {
    check_unit_interval(t)?;
    if n_samples < MIN_IS_SAMPLES {
        return Err(Error::Domain(format!(
            "need at least {MIN_IS_SAMPLES} importance draws, got {n_samples}"
        )));
    }
    let d = target.dim();
    let mut raw = Vec::with_capacity(n_samples * d);
    for _ in 0..n_samples {
        raw.extend(standard_normal_vec(rng, d));
    }
    snis_moments(schedule, t, x, target, &Samples::new(d, raw)?)
}

/// SNIS posterior mean alone, with the same draws and weights as
/// [`snis_moments`].
pub(crate) fn snis_mean(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    target: &PerturbedGaussian,
    base: &Samples,
) -> Result<DVector<f64>> {
    check_finite(x)?;
    let d = target.dim();
    if x.len() != d || base.dim() != d {
        return Err(Error::SizeMismatch(format!(
            "point has dimension {}, target has {d}",
            x.len()
        )));
    }
    let (sigma, _) = schedule.eval(t);
    let (a, _) = schedule.mu(t);
    let denom = a * a + sigma * sigma;
    let scale = (sigma * sigma / denom).sqrt();
    let center: Vec<f64> = x.iter().map(|v| a * v / denom).collect();
    let pert = target.perturbation();
    let n = base.len();
    let mut ys = Vec::with_capacity(n * d);
    let mut logw = Vec::with_capacity(n);
    let mut y = vec![0.0; d];
    for e in base.rows() {
        for i in 0..d {
            y[i] = center[i] + scale * e[i];
        }
        logw.push(-pert.value(&y));
        ys.extend_from_slice(&y);
    }
    let lmax = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mean = DVector::zeros(d);
    let mut sw = 0.0;
    for (k, l) in logw.iter().enumerate() {
        let wk = (l - lmax).exp();
        sw += wk;
        for i in 0..d {
            mean[i] += wk * ys[k * d + i];
        }
    }
    Ok(mean / sw)
}

/// SNIS moments using caller-provided standard-normal base draws.
pub(crate) fn snis_moments(
    schedule: &VarianceSchedule,
    t: f64,
    x: &[f64],
    target: &PerturbedGaussian,
    base: &Samples,
) -> Result<PosteriorMoments> {
    check_finite(x)?;
    let d = target.dim();
    if x.len() != d || base.dim() != d {
        return Err(Error::SizeMismatch(format!(
            "point has dimension {}, target has {d}",
            x.len()
        )));
    }
    let (sigma, _) = schedule.eval(t);
    let (a, _) = schedule.mu(t);
    let denom = a * a + sigma * sigma;
    let scale = (sigma * sigma / denom).sqrt();
    let center: Vec<f64> = x.iter().map(|v| a * v / denom).collect();
    let pert = target.perturbation();

    let n = base.len();
    let mut ys = Vec::with_capacity(n * d);
    let mut logw = Vec::with_capacity(n);
    let mut y = vec![0.0; d];
    for e in base.rows() {
        for i in 0..d {
            y[i] = center[i] + scale * e[i];
        }
        logw.push(-pert.value(&y));
        ys.extend_from_slice(&y);
    }
    let lmax = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - lmax).exp()).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();

    let mut mean = DVector::zeros(d);
    for (k, wk) in w.iter().enumerate() {
        for i in 0..d {
            mean[i] += wk * ys[k * d + i];
        }
    }
    mean /= sw;

    let mut cov = DMatrix::zeros(d, d);
    for (k, wk) in w.iter().enumerate() {
        for i in 0..d {
            let di = ys[k * d + i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += wk * di * (ys[k * d + j] - mean[j]);
            }
        }
    }
    cov /= sw;
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }

    // delta-method standard errors of each covariance entry
    let mut se = DMatrix::<f64>::zeros(d, d);
    for (k, wk) in w.iter().enumerate() {
        for i in 0..d {
            let di = ys[k * d + i] - mean[i];
            for j in 0..=i {
                let f = di * (ys[k * d + j] - mean[j]) - cov[(i, j)];
                se[(i, j)] += wk * wk * f * f;
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = se[(i, j)].sqrt() / sw;
            se[(i, j)] = v;
            se[(j, i)] = v;
        }
    }

    let ess = sw * sw / sw2;
    Ok(PosteriorMoments {
        mean,
        cov: psd_floor(&symmetrize(&cov)),
        ess: Ess::Estimated(ess),
        cov_se: Some(se),
        degenerate: ess < DEGENERACY_FRACTION * n as f64,
    })
}
