//! Fixed-step integration of the flow ODE `dψ_t/dt = v(t, ψ_t)` from 0 to 1.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::rng::standard_normal_vec;
use crate::samples::Samples;

/// Default number of integration steps.
pub const DEFAULT_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Euler => "euler",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "euler" => Ok(Method::Euler),
            other => Err(Error::Config(format!(
                "unknown integration method '{other}' (expected rk4 or euler)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    steps: usize,
    method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            method: Method::Rk4,
        }
    }
}

impl IntegratorConfig {
    pub fn new(steps: usize, method: Method) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("integration steps must be >= 1".into()));
        }
        Ok(Self { steps, method })
    }

    pub fn rk4(steps: usize) -> Result<Self> {
        Self::new(steps, Method::Rk4)
    }

    pub fn euler(steps: usize) -> Result<Self> {
        Self::new(steps, Method::Euler)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn step_size(&self) -> f64 {
        1.0 / self.steps as f64
    }
}

fn eval<F: VelocityField + ?Sized>(field: &F, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let v = field.velocity(t, x);
    if v.len() != x.len() {
        return Err(Error::SizeMismatch(format!(
            "field returned {} components for a {}-dimensional state",
            v.len(),
            x.len()
        )));
    }
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Integration { t })
    }
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn step<F: VelocityField + ?Sized>(field: &F, method: Method, t: f64, h: f64, x: &[f64]) -> Result<Vec<f64>> {
    match method {
        Method::Euler => Ok(axpy(x, h, &eval(field, t, x)?)),
        Method::Rk4 => {
            let th = (t + 0.5 * h).min(1.0);
            let t1 = (t + h).min(1.0);
            let k1 = eval(field, t, x)?;
            let k2 = eval(field, th, &axpy(x, 0.5 * h, &k1))?;
            let k3 = eval(field, th, &axpy(x, 0.5 * h, &k2))?;
            let k4 = eval(field, t1, &axpy(x, h, &k3))?;
            Ok(x
                .iter()
                .enumerate()
                .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        }
    }
}

fn check_dim<F: VelocityField + ?Sized>(field: &F, x0: &[f64]) -> Result<()> {
    if field.dim() != x0.len() {
        return Err(Error::SizeMismatch(format!(
            "field has dimension {} but the start point has {}",
            field.dim(),
            x0.len()
        )));
    }
    Ok(())
}

/// `ψ̂_1(x0)` by the configured fixed-step scheme.
pub fn integrate<F: VelocityField + ?Sized>(field: &F, x0: &[f64], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    check_dim(field, x0)?;
    let h = cfg.step_size();
    let mut x = x0.to_vec();
    for k in 0..cfg.steps {
        x = step(field, cfg.method, k as f64 * h, h, &x)?;
    }
    Ok(x)
}

/// Every intermediate state `(t_k, ψ̂_{t_k}(x0))`, endpoints included.
pub fn trajectory<F: VelocityField + ?Sized>(
    field: &F,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_dim(field, x0)?;
    let h = cfg.step_size();
    let mut out = Vec::with_capacity(cfg.steps + 1);
    out.push((0.0, x0.to_vec()));
    for k in 0..cfg.steps {
        let next = step(field, cfg.method, k as f64 * h, h, &out[k].1)?;
        let t = if k + 1 == cfg.steps { 1.0 } else { (k + 1) as f64 * h };
        out.push((t, next));
    }
    Ok(out)
}

/// Draw `m` latent points `z ~ N(0, I_d)` and push each through the flow.
pub fn push_samples<F: VelocityField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    rng: &mut R,
    m: usize,
    cfg: &IntegratorConfig,
) -> Result<Samples> {
    if m == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let d = field.dim();
    let mut data = Vec::with_capacity(m * d);
    for _ in 0..m {
        data.extend(standard_normal_vec(rng, d));
    }
    let mut out = Samples::new(d, data)?;
    push_points(field, &mut out, cfg)?;
    Ok(out)
}

/// Push every row of `points` through the flow in place.
///
/// All rows advance together so the field can share per-time work across
/// the batch; the result matches `integrate` applied row by row.
pub fn push_points<F: VelocityField + ?Sized>(field: &F, points: &mut Samples, cfg: &IntegratorConfig) -> Result<()> {
    if field.dim() != points.dim() {
        return Err(Error::SizeMismatch(format!(
            "field has dimension {} but the points have {}",
            field.dim(),
            points.dim()
        )));
    }
    let h = cfg.step_size();
    let mut x = points.as_slice().to_vec();
    for k in 0..cfg.steps {
        x = step_batch(field, cfg.method, k as f64 * h, h, &x)?;
    }
    points.as_mut_slice().copy_from_slice(&x);
    Ok(())
}

fn eval_batch<F: VelocityField + ?Sized>(field: &F, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
    let v = field.velocity_batch(t, xs);
    if v.len() != xs.len() {
        return Err(Error::SizeMismatch(format!(
            "field returned {} components for {} state components",
            v.len(),
            xs.len()
        )));
    }
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Integration { t })
    }
}

fn step_batch<F: VelocityField + ?Sized>(field: &F, method: Method, t: f64, h: f64, x: &[f64]) -> Result<Vec<f64>> {
    match method {
        Method::Euler => Ok(axpy(x, h, &eval_batch(field, t, x)?)),
        Method::Rk4 => {
            let th = (t + 0.5 * h).min(1.0);
            let t1 = (t + h).min(1.0);
            let k1 = eval_batch(field, t, x)?;
            let k2 = eval_batch(field, th, &axpy(x, 0.5 * h, &k1))?;
            let k3 = eval_batch(field, th, &axpy(x, 0.5 * h, &k2))?;
            let k4 = eval_batch(field, t1, &axpy(x, h, &k3))?;
            Ok(x
                .iter()
                .enumerate()
                .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FnField, ZeroField};
    use crate::rng::from_seed;

    #[test]
    fn zero_field_is_identity() {
        let cfg = IntegratorConfig::default();
        let x = integrate(&ZeroField(3), &[1.0, -2.0, 0.5], &cfg).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
        let traj = trajectory(&ZeroField(1), &[4.0], &IntegratorConfig::rk4(10).unwrap()).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.iter().all(|(_, x)| x[0] == 4.0));
        assert_eq!(traj.last().unwrap().0, 1.0);
    }

    #[test]
    fn batched_push_matches_pointwise() {
        use crate::field::MarginalField;
        use crate::nn::MlpNetwork;
        use crate::targets::GaussianMixture;
        let mix = GaussianMixture::isotropic(vec![0.3, 0.7], vec![vec![-1.0, 0.0], vec![2.0, 1.0]], vec![0.2, 0.5]).unwrap();
        let field = MarginalField::exact(crate::VarianceSchedule::geometric(0.01, 1.0).unwrap(), mix);
        let net = MlpNetwork::random(2, &[16, 16], 3.0, 20.0, &mut from_seed(4)).unwrap();
        let cfg = IntegratorConfig::rk4(32).unwrap();
        let start = Samples::new(2, crate::rng::standard_normal_vec(&mut from_seed(5), 20)).unwrap();
        for f in [&field as &dyn VelocityField, &net] {
            let mut batch = start.clone();
            push_points(f, &mut batch, &cfg).unwrap();
            for (i, row) in start.rows().enumerate() {
                let y = integrate(f, row, &cfg).unwrap();
                for (a, b) in y.iter().zip(batch.row(i)) {
                    assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }
        }
    }

    #[test]
    fn constant_field_is_exact() {
        let f = FnField::new(2, |_t, _x: &[f64]| vec![0.25, -1.5]);
        let x = integrate(&f, &[1.0, 1.0], &IntegratorConfig::rk4(7).unwrap()).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-15 && (x[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_field_matches_exponential() {
        let f = FnField::new(1, |_t, x: &[f64]| vec![-x[0]]);
        let x = integrate(&f, &[2.0], &IntegratorConfig::default()).unwrap();
        let exact = 2.0 * (-1.0f64).exp();
        assert!(((x[0] - exact) / exact).abs() < 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = FnField::new(1, |_t, x: &[f64]| vec![-x[0]]);
        let exact = (-1.0f64).exp();
        let err = |n| (integrate(&f, &[1.0], &IntegratorConfig::rk4(n).unwrap()).unwrap()[0] - exact).abs();
        let ratio = err(16) / err(32);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn euler_is_first_order() {
        let f = FnField::new(1, |_t, x: &[f64]| vec![-x[0]]);
        let exact = (-1.0f64).exp();
        let err = |n| (integrate(&f, &[1.0], &IntegratorConfig::euler(n).unwrap()).unwrap()[0] - exact).abs();
        let ratio = err(64) / err(128);
        assert!((1.8..=2.2).contains(&ratio));
    }

    #[test]
    fn non_finite_field_reports_time() {
        let f = FnField::new(1, |t, _x: &[f64]| vec![if t > 0.5 { f64::NAN } else { 0.0 }]);
        match integrate(&f, &[0.0], &IntegratorConfig::euler(4).unwrap()) {
            Err(Error::Integration { t }) => assert!((t - 0.75).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn push_is_deterministic() {
        let f = FnField::new(2, |t, x: &[f64]| vec![x[1] * t, -x[0]]);
        let cfg = IntegratorConfig::rk4(16).unwrap();
        let a = push_samples(&f, &mut from_seed(9), 50, &cfg).unwrap();
        let b = push_samples(&f, &mut from_seed(9), 50, &cfg).unwrap();
        assert_eq!(a, b);
        let z = push_samples(&ZeroField(2), &mut from_seed(9), 5, &cfg).unwrap();
        let mut rng = from_seed(9);
        for i in 0..5 {
            assert_eq!(z.row(i), standard_normal_vec(&mut rng, 2).as_slice());
        }
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(IntegratorConfig::rk4(0).is_err());
        assert!("midpoint".parse::<Method>().is_err());
    }
}
