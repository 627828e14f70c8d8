//! Target distributions.
//!
//! Two families are supported: explicit Gaussian mixtures, whose marginal
//! velocity field is available in closed form and serves as the exact oracle,
//! and bounded perturbations of the standard Gaussian,
//! `p(x) ∝ exp(-|x|²/2 - a(x))` with `a` bounded in `C²` by `L`.

mod mixture;
mod perturbed;

pub use mixture::GaussianMixture;
pub use perturbed::{CatalogPerturbation, Perturbation, PerturbedGaussian, RejectionStats};

use crate::error::{check_finite, Result};
use crate::samples::Samples;
use rand::Rng;

#[derive(Debug, Clone)]
pub enum TargetModel {
    Mixture(GaussianMixture),
    Perturbed(PerturbedGaussian),
}

impl TargetModel {
    pub fn dim(&self) -> usize {
        match self {
            TargetModel::Mixture(m) => m.dim(),
            TargetModel::Perturbed(p) => p.dim(),
        }
    }

    /// Mixtures: the normalised log density. Perturbed: `-|x|²/2 - a(x)`.
    pub fn log_density_unnorm(&self, x: &[f64]) -> Result<f64> {
        check_finite(x)?;
        self.check_dim(x)?;
        Ok(match self {
            TargetModel::Mixture(m) => m.log_density(x),
            TargetModel::Perturbed(p) => p.log_density_unnorm(x),
        })
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_finite(x)?;
        self.check_dim(x)?;
        match self {
            TargetModel::Mixture(m) => Ok(m.grad_log_density(x)),
            TargetModel::Perturbed(p) => p.grad_log_density(x),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Samples {
        match self {
            TargetModel::Mixture(m) => m.sample(rng, n),
            TargetModel::Perturbed(p) => p.sample(rng, n),
        }
    }

    /// Declared `C²` bound of the perturbation; 0 for mixtures.
    pub fn perturbation_bound(&self) -> f64 {
        match self {
            TargetModel::Mixture(_) => 0.0,
            TargetModel::Perturbed(p) => p.bound(),
        }
    }

    /// Largest component-mean norm (0 for perturbed targets, which are
    /// centred perturbations of `N(0, I)`).
    pub fn mean_radius(&self) -> f64 {
        match self {
            TargetModel::Mixture(m) => m
                .means()
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max),
            TargetModel::Perturbed(_) => 0.0,
        }
    }

    pub fn as_mixture(&self) -> Option<&GaussianMixture> {
        match self {
            TargetModel::Mixture(m) => Some(m),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(crate::Error::SizeMismatch(format!(
                "point has dimension {}, target has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl From<GaussianMixture> for TargetModel {
    fn from(m: GaussianMixture) -> Self {
        TargetModel::Mixture(m)
    }
}

impl From<PerturbedGaussian> for TargetModel {
    fn from(p: PerturbedGaussian) -> Self {
        TargetModel::Perturbed(p)
    }
}
