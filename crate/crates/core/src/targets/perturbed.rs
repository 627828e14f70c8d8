use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::rng::{from_seed, standard_normal_vec};
use crate::samples::Samples;

/// A perturbation `a: R^d → R` of the standard Gaussian log density.
///
/// Gradient and Hessian are optional capabilities; operations that need them
/// fail with [`Error::Capability`] when absent.
pub trait Perturbation: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn name(&self) -> String;
}

/// Built-in perturbations with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CatalogPerturbation {
    /// `a ≡ 0`.
    Zero,
    /// `a(x) = c sin(x_1)`.
    Sin { amplitude: f64 },
    /// `a(x) = c Σ_i cos(x_i)`.
    CosSum { amplitude: f64 },
    /// `a(x) = c exp(-|x|²/2)`.
    Bump { amplitude: f64 },
}

impl CatalogPerturbation {
    /// Parse a catalog name (`zero`, `sin`, `cos-sum`, `bump`).
    pub fn from_name(name: &str, amplitude: f64) -> Option<Self> {
        match name {
            "zero" => Some(Self::Zero),
            "sin" => Some(Self::Sin { amplitude }),
            "cos-sum" => Some(Self::CosSum { amplitude }),
            "bump" => Some(Self::Bump { amplitude }),
            _ => None,
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Sin { amplitude } | Self::CosSum { amplitude } | Self::Bump { amplitude } => {
                amplitude
            }
        }
    }

    /// Smallest `L` bounding `sup|a|`, `sup|∂a|` and `sup|∂²a|` in dimension `d`.
    pub fn declared_bound(&self, d: usize) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Sin { amplitude } | Self::Bump { amplitude } => amplitude.abs(),
            Self::CosSum { amplitude } => amplitude.abs() * d as f64,
        }
    }

    pub fn catalog_name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Sin { .. } => "sin",
            Self::CosSum { .. } => "cos-sum",
            Self::Bump { .. } => "bump",
        }
    }
}

impl Perturbation for CatalogPerturbation {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Sin { amplitude } => amplitude * x[0].sin(),
            Self::CosSum { amplitude } => amplitude * x.iter().map(|v| v.cos()).sum::<f64>(),
            Self::Bump { amplitude } => amplitude * (-0.5 * norm_sq(x)).exp(),
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = x.len();
        Some(match *self {
            Self::Zero => vec![0.0; d],
            Self::Sin { amplitude } => {
                let mut g = vec![0.0; d];
                g[0] = amplitude * x[0].cos();
                g
            }
            Self::CosSum { amplitude } => x.iter().map(|v| -amplitude * v.sin()).collect(),
            Self::Bump { amplitude } => {
                let e = amplitude * (-0.5 * norm_sq(x)).exp();
                x.iter().map(|v| -v * e).collect()
            }
        })
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let d = x.len();
        Some(match *self {
            Self::Zero => DMatrix::zeros(d, d),
            Self::Sin { amplitude } => {
                let mut h = DMatrix::zeros(d, d);
                h[(0, 0)] = -amplitude * x[0].sin();
                h
            }
            Self::CosSum { amplitude } => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    d,
                    x.iter().map(|v| -amplitude * v.cos()),
                ))
            }
            Self::Bump { amplitude } => {
                let e = amplitude * (-0.5 * norm_sq(x)).exp();
                DMatrix::from_fn(d, d, |i, j| {
                    (x[i] * x[j] - if i == j { 1.0 } else { 0.0 }) * e
                })
            }
        })
    }

    fn name(&self) -> String {
        format!("{}({})", self.catalog_name(), self.amplitude())
    }
}

/// Counts from a rejection-sampling run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RejectionStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl RejectionStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals as f64
    }
}

/// `p(x) ∝ exp(-|x|²/2 - a(x))` with `‖a‖_{C²} ≤ L`.
#[derive(Clone)]
pub struct PerturbedGaussian {
    dim: usize,
    perturbation: Arc<dyn Perturbation>,
    bound: f64,
    catalog: Option<CatalogPerturbation>,
}

impl fmt::Debug for PerturbedGaussian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbedGaussian")
            .field("dim", &self.dim)
            .field("perturbation", &self.perturbation.name())
            .field("bound", &self.bound)
            .finish()
    }
}

const PROBE_COUNT: usize = 100;
const PROBE_SEED: u64 = 0x5eed_c2b0;

impl PerturbedGaussian {
    /// Validates the declared bound at the origin and at 100 random probes.
    pub fn new(dim: usize, perturbation: Arc<dyn Perturbation>, bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidTarget("dimension must be positive".into()));
        }
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::InvalidTarget(format!("bound L = {bound} must be >= 0")));
        }
        let tol = bound * (1.0 + 1e-12) + 1e-15;
        let check = |x: &[f64]| -> Result<()> {
            let v = perturbation.value(x);
            if !(v.abs() <= tol) {
                return Err(Error::InvalidTarget(format!(
                    "|a(x)| = {} exceeds L = {bound} at {x:?}",
                    v.abs()
                )));
            }
            if let Some(g) = perturbation.gradient(x) {
                let gm = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if !(gm <= tol) {
                    return Err(Error::InvalidTarget(format!(
                        "|grad a(x)| = {gm} exceeds L = {bound} at {x:?}"
                    )));
                }
            }
            if let Some(h) = perturbation.hessian(x) {
                let hm = crate::linalg::max_abs(&h);
                if !(hm <= tol) {
                    return Err(Error::InvalidTarget(format!(
                        "|hess a(x)| = {hm} exceeds L = {bound} at {x:?}"
                    )));
                }
            }
            Ok(())
        };
        check(&vec![0.0; dim])?;
        let mut rng = from_seed(PROBE_SEED);
        for _ in 0..PROBE_COUNT {
            let x: Vec<f64> = standard_normal_vec(&mut rng, dim)
                .into_iter()
                .map(|v| 2.0 * v)
                .collect();
            check(&x)?;
        }
        Ok(Self {
            dim,
            perturbation,
            bound,
            catalog: None,
        })
    }

    pub fn from_catalog(dim: usize, p: CatalogPerturbation) -> Result<Self> {
        let mut s = Self::new(dim, Arc::new(p), p.declared_bound(dim))?;
        s.catalog = Some(p);
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn perturbation(&self) -> &dyn Perturbation {
        self.perturbation.as_ref()
    }

    pub fn catalog(&self) -> Option<CatalogPerturbation> {
        self.catalog
    }

    pub fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        -0.5 * norm_sq(x) - self.perturbation.value(x)
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.perturbation.gradient(x).ok_or_else(|| {
            Error::Capability(format!("{} has no gradient", self.perturbation.name()))
        })?;
        Ok(x.iter().zip(g).map(|(xi, gi)| -xi - gi).collect())
    }

    /// Rejection sampling from a standard-normal proposal; a proposal `y` is
    /// accepted with probability `exp(-a(y) - L) ∈ [e^{-2L}, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Samples {
        self.sample_with_stats(rng, n).0
    }

    pub fn sample_with_stats<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> (Samples, RejectionStats) {
        let mut out = Samples::zeros(n, self.dim);
        let mut stats = RejectionStats::default();
        let mut i = 0;
        while i < n {
            let y = standard_normal_vec(rng, self.dim);
            let u: f64 = rng.random();
            stats.proposals += 1;
            if u < (-self.perturbation.value(&y) - self.bound).exp() {
                out.row_mut(i).copy_from_slice(&y);
                stats.accepted += 1;
                i += 1;
            }
        }
        (out, stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[derive(Debug)]
    struct ValueOnly;

    impl Perturbation for ValueOnly {
        fn value(&self, x: &[f64]) -> f64 {
            0.1 * x[0].tanh()
        }
        fn name(&self) -> String {
            "value-only".into()
        }
    }

    #[test]
    fn log_density_examples() {
        let z = PerturbedGaussian::from_catalog(2, CatalogPerturbation::Zero).unwrap();
        assert_eq!(z.log_density_unnorm(&[0.0, 0.0]), 0.0);
        let s = PerturbedGaussian::from_catalog(2, CatalogPerturbation::Sin { amplitude: 0.1 })
            .unwrap();
        let pi2 = std::f64::consts::FRAC_PI_2;
        let expected = -std::f64::consts::PI.powi(2) / 8.0 - 0.1;
        assert!((s.log_density_unnorm(&[pi2, 0.0]) - expected).abs() < 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let z = PerturbedGaussian::from_catalog(2, CatalogPerturbation::Zero).unwrap();
        assert_eq!(z.grad_log_density(&[1.0, 2.0]).unwrap(), vec![-1.0, -2.0]);
        let s = PerturbedGaussian::from_catalog(2, CatalogPerturbation::Sin { amplitude: 0.1 })
            .unwrap();
        let g = s.grad_log_density(&[0.0, 0.0]).unwrap();
        assert!((g[0] + 0.1).abs() < 1e-15 && g[1] == 0.0);
    }

    #[test]
    fn missing_gradient_is_a_capability_error() {
        let p = PerturbedGaussian::new(1, Arc::new(ValueOnly), 0.1).unwrap();
        assert!(matches!(p.grad_log_density(&[0.3]), Err(Error::Capability(_))));
    }

    #[test]
    fn understated_bound_is_rejected() {
        let r = PerturbedGaussian::new(2, Arc::new(CatalogPerturbation::CosSum { amplitude: 0.2 }), 0.2);
        assert!(r.is_err());
        assert!(PerturbedGaussian::from_catalog(2, CatalogPerturbation::CosSum { amplitude: 0.2 }).is_ok());
    }

    #[test]
    fn zero_perturbation_accepts_everything() {
        let z = PerturbedGaussian::from_catalog(3, CatalogPerturbation::Zero).unwrap();
        let (_, stats) = z.sample_with_stats(&mut from_seed(1), 1000);
        assert_eq!(stats.proposals, 1000);
        assert_eq!(stats.accepted, 1000);
    }

    #[test]
    fn catalog_derivatives_match_finite_differences() {
        let x = [0.3, -0.7, 1.1];
        let h = 1e-6;
        for p in [
            CatalogPerturbation::Sin { amplitude: 0.2 },
            CatalogPerturbation::CosSum { amplitude: 0.1 },
            CatalogPerturbation::Bump { amplitude: 0.3 },
        ] {
            let g = p.gradient(&x).unwrap();
            let hess = p.hessian(&x).unwrap();
            for j in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let fd = (p.value(&xp) - p.value(&xm)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-8, "{p:?} grad {j}");
                let gp = p.gradient(&xp).unwrap();
                let gm = p.gradient(&xm).unwrap();
                for i in 0..3 {
                    let fdh = (gp[i] - gm[i]) / (2.0 * h);
                    assert!((fdh - hess[(i, j)]).abs() < 1e-8, "{p:?} hess {i}{j}");
                }
            }
        }
    }
}
