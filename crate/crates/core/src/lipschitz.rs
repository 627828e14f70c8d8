//! Spatial Lipschitz diagnostics of marginal velocity fields.
//!
//! The Jacobian of the marginal field is
//! `(σ'/σ) I + (γ t^{γ-1} - σ' t^γ/σ)(t^γ/σ²) Cov(Y^{x,t})`. Taking entrywise
//! suprema over `x` gives the matrix `B`, and the spatial Lipschitz constant
//! `Γ_t` satisfies `max_ij B_ij ≤ Γ_t ≤ d max_ij B_ij`. The supremum over
//! `R^d` is approximated by a probe set: a Halton grid over `[-R, R]^d` with
//! `R = 3 + 3·(mean radius)` plus samples from the target.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{jacobian_coefficients, MarginalField, VelocityField};
use crate::linalg::{dist, norm};
use crate::rng::unit_direction;
use crate::samples::{fmt_num, Samples};
use crate::schedules::VarianceSchedule;

/// Default number of Halton points in the probe set.
pub const DEFAULT_GRID_PROBES: usize = 256;
/// Default number of target samples added to the probe set.
pub const DEFAULT_SAMPLE_PROBES: usize = 100;
/// Default t-grid size.
pub const DEFAULT_T_POINTS: usize = 128;

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    inv = r;
    inv
}

/// `n` Halton points in `[-radius, radius]^d`.
pub fn halton_box(n: usize, d: usize, radius: f64) -> Samples {
    assert!(d <= PRIMES.len(), "Halton grid supports up to {} dimensions", PRIMES.len());
    let mut out = Samples::zeros(n, d);
    for i in 0..n {
        let row = out.row_mut(i);
        for (j, p) in PRIMES.iter().take(d).enumerate() {
            row[j] = radius * (2.0 * radical_inverse(i as u64 + 1, *p) - 1.0);
        }
    }
    out
}

/// Probe set for the supremum over `x`: a Halton grid over `[-R, R]^d` with
/// `R = 3 + 3·(target mean radius)` followed by target samples.
pub fn probe_set<R: Rng + ?Sized>(field: &MarginalField, grid: usize, samples: usize, rng: &mut R) -> Samples {
    let target = field.target();
    let d = target.dim();
    let radius = 3.0 + 3.0 * target.mean_radius();
    let h = halton_box(grid, d, radius);
    let s = target.sample(rng, samples);
    let mut data = h.as_slice().to_vec();
    data.extend_from_slice(s.as_slice());
    Samples::new(d, data).expect("consistent dimensions")
}

/// Radius of the Halton box used by [`probe_set`].
pub fn probe_radius(field: &MarginalField) -> f64 {
    3.0 + 3.0 * field.target().mean_radius()
}

/// `n` Chebyshev–Lobatto points on `[0, 1]` (both endpoints included).
pub fn chebyshev_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two grid points");
    (0..n)
        .map(|k| {
            let c = (std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
            (0.5 * (1.0 - c)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Probe-set approximation of the entrywise supremum of the Jacobian.
#[derive(Debug, Clone)]
pub struct BMatrix {
    pub t: f64,
    pub entries: DMatrix<f64>,
    /// Standard error of each entry at its maximising probe (zero when exact).
    pub se: DMatrix<f64>,
    /// Index of the maximising probe for each entry.
    pub argmax: DMatrix<usize>,
    /// Entries whose maximising probe came from a degenerate estimate.
    pub flagged: DMatrix<bool>,
}

impl BMatrix {
    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    /// Standard error attached to the largest entry.
    pub fn max_entry_se(&self) -> f64 {
        let (mut best, mut se) = (f64::NEG_INFINITY, 0.0);
        for (v, s) in self.entries.iter().zip(self.se.iter()) {
            if *v > best {
                best = *v;
                se = *s;
            }
        }
        se
    }

    pub fn any_flagged(&self) -> bool {
        self.flagged.iter().any(|f| *f)
    }
}

/// `B_ij = max_probes |σ'/σ 1{i=j} + (γt^{γ-1} - σ't^γ/σ)(t^γ/σ²) Cov_ij|`.
pub fn b_matrix(field: &MarginalField, t: f64, probes: &Samples) -> Result<BMatrix> {
    crate::error::check_unit_interval(t)?;
    if probes.is_empty() {
        return Err(Error::Domain("probe set is empty".into()));
    }
    let d = field.dim();
    let (q, c) = jacobian_coefficients(field.schedule(), t);
    let mut entries = DMatrix::from_element(d, d, f64::NEG_INFINITY);
    let mut se = DMatrix::zeros(d, d);
    let mut argmax = DMatrix::from_element(d, d, 0usize);
    let mut flagged = DMatrix::from_element(d, d, false);
    for (p, x) in probes.rows().enumerate() {
        let m = field.moments(t, x)?;
        for i in 0..d {
            for j in 0..d {
                let diag = if i == j { q } else { 0.0 };
                let v = (diag + c * m.cov[(i, j)]).abs();
                if v > entries[(i, j)] {
                    entries[(i, j)] = v;
                    se[(i, j)] = m.cov_se.as_ref().map_or(0.0, |s| c.abs() * s[(i, j)]);
                    argmax[(i, j)] = p;
                    flagged[(i, j)] = m.degenerate;
                }
            }
        }
    }
    Ok(BMatrix {
        t,
        entries,
        se,
        argmax,
        flagged,
    })
}

/// `(max_ij B_ij, d · max_ij B_ij)`.
pub fn gamma_bounds(field: &MarginalField, t: f64, probes: &Samples) -> Result<(f64, f64)> {
    let b = b_matrix(field, t, probes)?;
    let lower = b.max_entry();
    Ok((lower, field.dim() as f64 * lower))
}

fn trapezoid(ts: &[f64], ys: &[f64]) -> f64 {
    ts.windows(2)
        .zip(ys.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

/// Trapezoid integrals of the lower and upper `Γ_t` envelopes over `t_grid`.
pub fn integral_gamma(field: &MarginalField, t_grid: &[f64], probes: &Samples) -> Result<(f64, f64)> {
    let r = lipschitz_scan(field, t_grid, probes)?;
    Ok((r.integral_lower, r.integral_upper))
}

/// `√(2e) · exp(∫Γ_t dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallFactor {
    pub value: f64,
    pub log_value: f64,
    /// The squared factor is not representable; `value` is `+∞`.
    pub overflow: bool,
}

/// Grönwall amplification factor `√(2e) · exp(integral)`.
///
/// The factor enters squared-error bounds, so it is reported as overflowing
/// once its square leaves the `f64` range (integral above ~354).
pub fn gronwall_factor(integral_upper: f64) -> Result<GronwallFactor> {
    if !(integral_upper >= 0.0) {
        return Err(Error::Domain(format!(
            "integral {integral_upper} must be non-negative"
        )));
    }
    let log_value = 0.5 * (2.0 * std::f64::consts::E).ln() + integral_upper;
    let limit = 0.5 * f64::MAX.ln();
    if log_value > limit {
        Ok(GronwallFactor {
            value: f64::INFINITY,
            log_value,
            overflow: true,
        })
    } else {
        Ok(GronwallFactor {
            value: log_value.exp(),
            log_value,
            overflow: false,
        })
    }
}

/// Per-t Lipschitz bounds over a grid.
#[derive(Debug, Clone)]
pub struct LipschitzReport {
    pub t_grid: Vec<f64>,
    pub b_max: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub flagged: Vec<bool>,
    pub integral_lower: f64,
    pub integral_upper: f64,
    pub gronwall: GronwallFactor,
}

impl LipschitzReport {
    pub const CSV_HEADER: &'static str = "t,B_max,lower,upper";

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.t_grid.len())
            .map(|k| {
                format!(
                    "{},{},{},{}",
                    fmt_num(self.t_grid[k]),
                    fmt_num(self.b_max[k]),
                    fmt_num(self.lower[k]),
                    fmt_num(self.upper[k])
                )
            })
            .collect()
    }

    /// Footer block `integral_lower,integral_upper,gronwall` plus values.
    pub fn footer(&self) -> [String; 2] {
        [
            "integral_lower,integral_upper,gronwall".to_string(),
            format!(
                "{},{},{}",
                fmt_num(self.integral_lower),
                fmt_num(self.integral_upper),
                fmt_num(self.gronwall.value)
            ),
        ]
    }
}

pub fn lipschitz_scan(field: &MarginalField, t_grid: &[f64], probes: &Samples) -> Result<LipschitzReport> {
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("t-grid must be strictly increasing with >= 2 points".into()));
    }
    let d = field.dim() as f64;
    let mut b_max = Vec::with_capacity(t_grid.len());
    let mut flagged = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let b = b_matrix(field, t, probes)?;
        b_max.push(b.max_entry());
        flagged.push(b.any_flagged());
    }
    let upper: Vec<f64> = b_max.iter().map(|b| d * b).collect();
    let integral_lower = trapezoid(t_grid, &b_max);
    let integral_upper = trapezoid(t_grid, &upper);
    Ok(LipschitzReport {
        t_grid: t_grid.to_vec(),
        lower: b_max.clone(),
        b_max,
        upper,
        flagged,
        integral_lower,
        integral_upper,
        gronwall: gronwall_factor(integral_upper)?,
    })
}

/// Largest difference quotient over a set of point pairs.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalLipschitz {
    pub estimate: f64,
    /// Error estimate of the maximising quotient: the change when its
    /// separation is doubled, combined with the rounding bound
    /// `ε (|v(a)| + |v(b)|) / |a - b|`.
    pub se: f64,
    pub pairs: usize,
}

/// Relative pair separation `1e-4 σ_t²`, matched to the smallest length
/// scale on which a marginal field can vary at time `t`.
pub fn pair_step(schedule: &VarianceSchedule, t: f64) -> f64 {
    let (s, _) = schedule.eval(t);
    1e-4 * s * s
}

/// Empirical Lipschitz constant from `n_pairs` point pairs at time `t`.
///
/// Pairs are centred on probe points with separation `step (1 + |x|)`: first
/// one pair along every coordinate axis at every probe (as far as the budget
/// allows), then random probes with uniformly random directions.
pub fn empirical_lipschitz<F: VelocityField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    t: f64,
    probes: &Samples,
    n_pairs: usize,
    step: f64,
    rng: &mut R,
) -> Result<EmpiricalLipschitz> {
    if probes.is_empty() || n_pairs == 0 {
        return Err(Error::Domain("need probes and at least one pair".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Domain(format!("pair step {step} must be positive")));
    }
    let d = probes.dim();
    let quotient_and_rounding = |x: &[f64], u: &[f64], h: f64| -> (f64, f64) {
        let a: Vec<f64> = x.iter().zip(u).map(|(xi, ui)| xi - 0.5 * h * ui).collect();
        let b: Vec<f64> = x.iter().zip(u).map(|(xi, ui)| xi + 0.5 * h * ui).collect();
        let va = field.velocity(t, &a);
        let vb = field.velocity(t, &b);
        let sep = dist(&a, &b);
        (dist(&va, &vb) / sep, f64::EPSILON * (norm(&va) + norm(&vb)) / sep)
    };
    let quotient = |x: &[f64], u: &[f64], h: f64| quotient_and_rounding(x, u, h).0;
    let mut best = (f64::NEG_INFINITY, 0usize, Vec::new(), 0.0);
    let mut used = 0;
    'axes: for (p, x) in probes.rows().enumerate() {
        for j in 0..d {
            if used == n_pairs {
                break 'axes;
            }
            let mut u = vec![0.0; d];
            u[j] = 1.0;
            let h = step * (1.0 + norm(x));
            let q = quotient(x, &u, h);
            used += 1;
            if q > best.0 {
                best = (q, p, u, h);
            }
        }
    }
    while used < n_pairs {
        let p = rng.random_range(0..probes.len());
        let x = probes.row(p);
        let u = unit_direction(rng, d);
        let h = step * (1.0 + norm(x));
        let q = quotient(x, &u, h);
        used += 1;
        if q > best.0 {
            best = (q, p, u, h);
        }
    }
    let (estimate, p, u, h) = best;
    let coarse = quotient(probes.row(p), &u, 2.0 * h);
    let (_, rounding) = quotient_and_rounding(probes.row(p), &u, h);
    Ok(EmpiricalLipschitz {
        estimate,
        se: (coarse - estimate).hypot(rounding),
        pairs: used,
    })
}

/// `t*` with `σ_{t*} = 1/2`, raised to at least `2^{-1/γ}`.
pub fn default_tstar(schedule: &VarianceSchedule) -> f64 {
    let floor = 0.5f64.powf(1.0 / schedule.gamma());
    let (mut lo, mut hi) = (0.0, 1.0);
    if schedule.sigma_min() >= 0.5 {
        return 1.0 - 1e-9;
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if schedule.eval(mid).0 > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    floor.max(0.5 * (lo + hi))
}

/// Result of a log-log least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeFit {
    Fitted { slope: f64, points: usize },
    /// Every value is zero, so the decay condition holds trivially.
    Vacuous,
    /// Fewer than four usable grid points.
    Unavailable,
}

impl SlopeFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            SlopeFit::Fitted { slope, .. } => Some(*slope),
            _ => None,
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn fit(xs: &[f64], ys: &[f64]) -> SlopeFit {
    if !ys.is_empty() && ys.iter().all(|y| *y == 0.0) {
        return SlopeFit::Vacuous;
    }
    let usable = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .count();
    if usable < 4 {
        return SlopeFit::Unavailable;
    }
    match loglog_slope(xs, ys) {
        Some(slope) => SlopeFit::Fitted {
            slope,
            points: usable,
        },
        None => SlopeFit::Unavailable,
    }
}

/// Numerical audit of the covariance decay conditions.
#[derive(Debug, Clone)]
pub struct CovarianceAudit {
    pub t_grid: Vec<f64>,
    /// `σ_t / t^γ` at each grid point.
    pub scale: Vec<f64>,
    pub max_offdiag: Vec<f64>,
    pub max_var_deviation: Vec<f64>,
    /// `max_i |Var_i / (σ_t/t^γ)² - 1|`.
    pub max_var_rel_deviation: Vec<f64>,
    pub uniform_max: Vec<f64>,
    pub tstar: f64,
    /// Off-diagonal decay against `σ_t/t^γ` for `t > t*` (expected ≥ 3).
    pub offdiag_slope: SlopeFit,
    /// Relative variance deviation against `σ_t/t^γ` for `t > t*` (expected ≥ 1).
    pub variance_slope: SlopeFit,
    /// `max |Cov_ij|` over `t ≤ t*` and all probes.
    pub early_uniform_max: f64,
    /// `max |Cov_ij|` over the whole grid.
    pub global_uniform_max: f64,
    /// `e^{4L}` for the target's declared perturbation bound.
    pub uniform_reference: f64,
}

impl CovarianceAudit {
    pub fn uniform_bound_holds(&self) -> bool {
        self.global_uniform_max <= self.uniform_reference
    }
}

pub fn covariance_decay_audit(
    field: &MarginalField,
    probes: &Samples,
    t_grid: &[f64],
    tstar: f64,
) -> Result<CovarianceAudit> {
    let schedule = field.schedule();
    let lo = 0.5f64.powf(1.0 / schedule.gamma());
    if !(tstar >= lo - 1e-12 && tstar < 1.0) {
        return Err(Error::Domain(format!(
            "t* = {tstar} must lie in [2^(-1/gamma), 1) = [{lo}, 1)"
        )));
    }
    let d = field.dim();
    let grid: Vec<f64> = t_grid.iter().copied().filter(|t| *t > 0.0).collect();
    let mut audit = CovarianceAudit {
        t_grid: grid.clone(),
        scale: Vec::new(),
        max_offdiag: Vec::new(),
        max_var_deviation: Vec::new(),
        max_var_rel_deviation: Vec::new(),
        uniform_max: Vec::new(),
        tstar,
        offdiag_slope: SlopeFit::Unavailable,
        variance_slope: SlopeFit::Unavailable,
        early_uniform_max: 0.0,
        global_uniform_max: 0.0,
        uniform_reference: (4.0 * field.target().perturbation_bound()).exp(),
    };
    for &t in &grid {
        let (s, _) = schedule.eval(t);
        let (a, _) = schedule.mu(t);
        let scale = s / a;
        let (mut off, mut dev, mut rel, mut uni) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        for x in probes.rows() {
            let m = field.moments(t, x)?;
            for i in 0..d {
                let v = m.cov[(i, i)];
                dev = dev.max((v - scale * scale).abs());
                rel = rel.max((v / (scale * scale) - 1.0).abs());
                for j in 0..d {
                    let c = m.cov[(i, j)].abs();
                    uni = uni.max(c);
                    if i != j {
                        off = off.max(c);
                    }
                }
            }
        }
        audit.scale.push(scale);
        audit.max_offdiag.push(off);
        audit.max_var_deviation.push(dev);
        audit.max_var_rel_deviation.push(rel);
        audit.uniform_max.push(uni);
        audit.global_uniform_max = audit.global_uniform_max.max(uni);
        if t <= tstar {
            audit.early_uniform_max = audit.early_uniform_max.max(uni);
        }
    }
    let late: Vec<usize> = (0..grid.len()).filter(|&k| grid[k] > tstar).collect();
    let pick = |v: &[f64]| late.iter().map(|&k| v[k]).collect::<Vec<_>>();
    let xs = pick(&audit.scale);
    audit.offdiag_slope = if d == 1 {
        SlopeFit::Vacuous
    } else {
        fit(&xs, &pick(&audit.max_offdiag))
    };
    audit.variance_slope = fit(&xs, &pick(&audit.max_var_rel_deviation));
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use crate::targets::GaussianMixture;

    #[test]
    fn gronwall_values() {
        let g0 = gronwall_factor(0.0).unwrap();
        assert!((g0.value - (2.0 * std::f64::consts::E).sqrt()).abs() < 1e-14);
        assert!((g0.value - 2.3316).abs() < 1e-4);
        let g1 = gronwall_factor(1.0).unwrap();
        assert!((g1.value - 6.338).abs() < 1e-3);
        let g700 = gronwall_factor(700.0).unwrap();
        assert!(g700.overflow && g700.value.is_infinite());
        assert!(gronwall_factor(-1.0).is_err());
    }

    #[test]
    fn gronwall_is_monotone() {
        let mut prev = 0.0;
        for k in 0..400 {
            let g = gronwall_factor(k as f64).unwrap().value;
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn chebyshev_grid_is_sorted_with_endpoints() {
        let g = chebyshev_grid(128);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn halton_stays_in_box() {
        let h = halton_box(500, 3, 2.5);
        assert!(h.as_slice().iter().all(|v| v.abs() <= 2.5));
    }

    #[test]
    fn b_matrix_standard_gaussian() {
        let s = VarianceSchedule::geometric(std::f64::consts::E.powi(-1), 1.0).unwrap();
        let f = MarginalField::exact(s.clone(), GaussianMixture::standard_normal(2));
        let probes = probe_set(&f, 64, 20, &mut from_seed(1));
        let b0 = b_matrix(&f, 0.0, &probes).unwrap();
        assert!((b0.entries[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(b0.entries[(0, 1)], 0.0);
        let (lo, hi) = gamma_bounds(&f, 0.0, &probes).unwrap();
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 2.0).abs() < 1e-14);
        let t: f64 = 0.6;
        let sig = s.sigma(t).unwrap();
        let q = -1.0;
        let expected = (q + (1.0 - q * t) * t / (t * t + sig * sig)).abs();
        let b = b_matrix(&f, t, &probes).unwrap();
        assert!((b.entries[(1, 1)] - expected).abs() < 1e-12);
        assert_eq!(b.entries[(1, 0)], 0.0);
    }

    #[test]
    fn default_tstar_respects_floor() {
        let s = VarianceSchedule::geometric(1e-3, 1.0).unwrap();
        assert!((default_tstar(&s) - 0.5).abs() < 1e-12);
        let s = VarianceSchedule::linear(0.1, 1.0).unwrap();
        // 1 - 0.9 t = 0.5
        assert!((default_tstar(&s) - 5.0 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let xs: Vec<f64> = (1..10).map(|k| k as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(2.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 2.5).abs() < 1e-12);
    }
}
