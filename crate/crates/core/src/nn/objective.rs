//! Quadrature check of the identity `FM(ṽ) = CFM(ṽ) - E|v_t(X_t) - v_t(X_t | Y)|²`
//! for one-dimensional Gaussian mixture targets.

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::quadrature::{composite_gauss_legendre, gauss_hermite_normal};
use crate::schedules::VarianceSchedule;
use crate::targets::GaussianMixture;

const T_PANELS: usize = 16;
const T_NODES: usize = 8;
const X_NODES: usize = 48;
const Y_NODES: usize = 8;

/// The three objectives and `fm - (cfm - cvar)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveGap {
    /// `E_{t, X_t ~ p_t} |ṽ_t(X_t) - v_t(X_t)|²`.
    pub fm: f64,
    /// `E_{t, Y, X_t ~ p_t(·|Y)} |ṽ_t(X_t) - v_t(X_t | Y)|²`.
    pub cfm: f64,
    /// `E_{t, Y, X_t ~ p_t(·|Y)} |v_t(X_t) - v_t(X_t | Y)|²`.
    pub cvar: f64,
    pub residual: f64,
}

/// Evaluate all three objectives by tensor quadrature.
///
/// `t` uses composite Gauss–Legendre. For fixed `t` the marginal `p_t` is a
/// Gaussian mixture and `x` is integrated with Gauss–Hermite nodes per
/// component. The posterior of `Y` given `x` is again a Gaussian mixture
/// (computed here in precision form) and the `y` integral uses Gauss–Hermite
/// nodes per posterior component.
pub fn objective_gap_check<F: VelocityField + ?Sized>(
    net: &F,
    target: &GaussianMixture,
    schedule: &VarianceSchedule,
    quad_tol: f64,
) -> Result<ObjectiveGap> {
    if target.dim() != 1 || net.dim() != 1 {
        return Err(Error::Domain("objective check needs a one-dimensional target and field".into()));
    }
    if !(quad_tol > 0.0) {
        return Err(Error::Domain(format!("quad_tol = {quad_tol} must be positive")));
    }
    let t_rule = composite_gauss_legendre(T_PANELS, T_NODES, 0.0, 1.0);
    let x_rule = gauss_hermite_normal(X_NODES);
    let y_rule = gauss_hermite_normal(Y_NODES);
    let k = target.n_components();
    let w = target.weights();
    let m: Vec<f64> = target.means().iter().map(|v| v[0]).collect();
    let s2: Vec<f64> = target.covariances().iter().map(|c| c[(0, 0)]).collect();

    let (mut fm, mut cfm, mut cvar) = (0.0, 0.0, 0.0);
    for (&t, &wt) in t_rule.nodes.iter().zip(&t_rule.weights) {
        let sig = schedule.sigma(t)?;
        let q = schedule.log_quotient(t)?;
        let (a, da) = schedule.mu_coeffs(t)?;
        let cond = |x: f64, y: f64| q * (x - a * y) + da * y;
        let marg_sd: Vec<f64> = (0..k).map(|c| (a * a * s2[c] + sig * sig).sqrt()).collect();
        let prec: Vec<f64> = (0..k).map(|c| 1.0 / s2[c] + a * a / (sig * sig)).collect();
        let (mut fm_t, mut cfm_t, mut cvar_t) = (0.0, 0.0, 0.0);
        for c in 0..k {
            for (&z, &wz) in x_rule.nodes.iter().zip(&x_rule.weights) {
                let x = a * m[c] + marg_sd[c] * z;
                // posterior responsibilities, log-domain
                let logs: Vec<f64> = (0..k)
                    .map(|j| {
                        let r = (x - a * m[j]) / marg_sd[j];
                        w[j].ln() - marg_sd[j].ln() - 0.5 * r * r
                    })
                    .collect();
                let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
                let tot: f64 = ex.iter().sum();
                let post_mean: Vec<f64> = (0..k)
                    .map(|j| (m[j] / s2[j] + a * x / (sig * sig)) / prec[j])
                    .collect();
                let ey: f64 = (0..k).map(|j| ex[j] / tot * post_mean[j]).sum();
                let v = q * (x - a * ey) + da * ey;
                let vt = net.velocity(t, &[x])[0];
                if !vt.is_finite() {
                    return Err(Error::Quadrature(format!("non-finite field value at t = {t}, x = {x}")));
                }
                let (mut cf, mut cv) = (0.0, 0.0);
                for j in 0..k {
                    let sd = prec[j].recip().sqrt();
                    for (&u, &wu) in y_rule.nodes.iter().zip(&y_rule.weights) {
                        let y = post_mean[j] + sd * u;
                        let vc = cond(x, y);
                        let r = ex[j] / tot * wu;
                        cf += r * (vt - vc).powi(2);
                        cv += r * (v - vc).powi(2);
                    }
                }
                let px = w[c] * wz;
                fm_t += px * (vt - v).powi(2);
                cfm_t += px * cf;
                cvar_t += px * cv;
            }
        }
        fm += wt * fm_t;
        cfm += wt * cfm_t;
        cvar += wt * cvar_t;
    }
    let residual = fm - (cfm - cvar);
    if !(residual.abs() < quad_tol) {
        return Err(Error::Quadrature(format!(
            "objective identity residual {residual:e} exceeds tolerance {quad_tol:e}"
        )));
    }
    Ok(ObjectiveGap {
        fm,
        cfm,
        cvar,
        residual,
    })
}
