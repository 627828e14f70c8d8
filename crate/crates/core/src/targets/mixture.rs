use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::rng::standard_normal_vec;
use crate::samples::Samples;

/// Finite Gaussian mixture `Σ_k w_k N(m_k, S_k)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    chols: Vec<Cholesky<f64, Dyn>>,
    // -d/2 log 2π - 1/2 log det S_k
    log_norms: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::InvalidTarget(format!(
                "mixture needs matching non-empty weights/means/covariances ({} / {} / {})",
                k,
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidTarget("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTarget(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidTarget("zero-dimensional mixture".into()));
        }
        let mut chols = Vec::with_capacity(k);
        let mut log_norms = Vec::with_capacity(k);
        for (i, (m, s)) in means.iter().zip(&covs).enumerate() {
            if m.len() != d || s.nrows() != d || s.ncols() != d {
                return Err(Error::InvalidTarget(format!(
                    "component {i} has inconsistent dimensions"
                )));
            }
            if m.iter().chain(s.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidTarget(format!("component {i} is not finite")));
            }
            let scale = crate::linalg::max_abs(s).max(1.0);
            if (s - s.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
                return Err(Error::InvalidTarget(format!(
                    "covariance {i} is not symmetric"
                )));
            }
            let c = Cholesky::new(s.clone()).ok_or_else(|| {
                Error::InvalidTarget(format!("covariance {i} is not positive definite"))
            })?;
            let log_det: f64 = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            log_norms.push(-0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det);
            chols.push(c);
        }
        Ok(Self {
            weights,
            means: means.into_iter().map(DVector::from_vec).collect(),
            covs,
            chols,
            log_norms,
        })
    }

    /// `N(0, I_d)` as a one-component mixture.
    pub fn standard_normal(d: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; d]], vec![DMatrix::identity(d, d)])
            .expect("standard normal is a valid mixture")
    }

    /// Mixture with isotropic components `N(m_k, v_k I)`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let d = means.first().map(Vec::len).unwrap_or(0);
        let covs = variances
            .iter()
            .map(|&v| DMatrix::identity(d, d) * v)
            .collect();
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covs
    }

    fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.means[k];
        let z = self.chols[k].l().solve_lower_triangular(&diff).expect("triangular solve");
        self.log_norms[k] - 0.5 * z.norm_squared()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.n_components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Component responsibilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let terms: Vec<f64> = (0..self.n_components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x))
            .collect();
        let lse = log_sum_exp(&terms);
        terms.iter().map(|t| (t - lse).exp()).collect()
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let r = self.responsibilities(x);
        let xv = DVector::from_column_slice(x);
        let mut g = DVector::zeros(self.dim());
        for (k, rk) in r.iter().enumerate() {
            let diff = &self.means[k] - &xv;
            g += self.chols[k].solve(&diff) * *rk;
        }
        g.as_slice().to_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Samples {
        let d = self.dim();
        let mut out = Samples::zeros(n, d);
        for i in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.n_components() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            let z = DVector::from_vec(standard_normal_vec(rng, d));
            let y = &self.means[k] + self.chols[k].l() * z;
            out.row_mut(i).copy_from_slice(y.as_slice());
        }
        out
    }

    pub fn mean(&self) -> DVector<f64> {
        self.means
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(self.dim()), |acc, (m, w)| acc + m * *w)
    }

    /// Mixture covariance by the law of total covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for k in 0..self.n_components() {
            let diff = &self.means[k] - &mu;
            c += (&self.covs[k] + &diff * diff.transpose()) * self.weights[k];
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn standard_normal_mode() {
        let m = GaussianMixture::standard_normal(1);
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.log_density(&[0.0]) - expected).abs() < 1e-15);
    }

    #[test]
    fn single_component_score() {
        let m = GaussianMixture::isotropic(vec![1.0], vec![vec![1.0, -2.0]], vec![1.0]).unwrap();
        let g = m.grad_log_density(&[0.5, 0.5]);
        assert!((g[0] - 0.5).abs() < 1e-14 && (g[1] + 2.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_components() {
        let bad_w = GaussianMixture::isotropic(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]);
        assert!(bad_w.is_err());
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![not_spd]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![asym]).is_err());
        assert!(GaussianMixture::isotropic(vec![1.0], vec![vec![0.0]], vec![-1.0]).is_err());
    }

    #[test]
    fn sample_mean_matches() {
        let m = GaussianMixture::isotropic(vec![1.0], vec![vec![5.0]], vec![1.0]).unwrap();
        let mut rng = from_seed(3);
        let s = m.sample(&mut rng, 100_000);
        let se = 1.0 / (100_000f64).sqrt();
        assert!((s.mean()[0] - 5.0).abs() < 3.0 * se);
    }
}
