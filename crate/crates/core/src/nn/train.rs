//! Minibatch training on the empirical conditional Flow Matching objective.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{input_box_for, output_bound, Gradients, MlpNetwork};
use crate::error::{Error, Result};
use crate::field::conditional_velocity_unchecked;
use crate::rng::{standard_normal_vec, stream};
use crate::samples::Samples;
use crate::schedules::VarianceSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

fn default_batch() -> usize {
    256
}
fn default_steps() -> usize {
    5000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of training points.
    pub n: usize,
    /// Terminal noise level; `None` picks the sample-size-dependent default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            sigma_min: None,
            batch: default_batch().min(n.max(1)),
            steps: default_steps(),
            lr: default_lr(),
            lr_schedule: LrSchedule::default(),
            hidden: default_hidden(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("train.n must be >= 1".into()));
        }
        if let Some(s) = self.sigma_min {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!("train.sigma_min = {s} must lie in (0, 1)")));
            }
        }
        if self.batch == 0 || self.batch > self.n {
            return Err(Error::Config(format!(
                "train.batch = {} must lie in [1, n = {}]",
                self.batch, self.n
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr = {} must be finite and >= 0", self.lr)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("train.hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let frac = step as f64 / self.steps.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Minibatch loss and gradient with respect to every network parameter.
#[derive(Debug, Clone)]
pub struct StepLoss {
    pub loss: f64,
    pub grads: Gradients,
}

/// One Monte Carlo estimate of the conditional Flow Matching loss on `batch`.
///
/// Each datum `y` gets a fresh `t ~ U[0,1]` and `X_t = t^γ y + σ_t ε`; the
/// regression target `v_t(X_t | y)` is treated as a constant.
pub fn cfm_step_loss<R: Rng + ?Sized>(
    net: &MlpNetwork,
    batch: &Samples,
    schedule: &VarianceSchedule,
    rng: &mut R,
) -> Result<StepLoss> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let d = net.dim();
    if batch.dim() != d {
        return Err(Error::SizeMismatch(format!(
            "batch has dimension {}, network {}",
            batch.dim(),
            d
        )));
    }
    let b = batch.len();
    let mut ts = Vec::with_capacity(b);
    let mut xs = Vec::with_capacity(b * d);
    let mut targets = DMatrix::zeros(d, b);
    for (j, y) in batch.rows().enumerate() {
        let t: f64 = rng.random();
        let (s, _) = schedule.eval(t);
        let (a, _) = schedule.mu(t);
        let eps = standard_normal_vec(rng, d);
        let x: Vec<f64> = y.iter().zip(&eps).map(|(yi, e)| a * yi + s * e).collect();
        let v = conditional_velocity_unchecked(schedule, t, &x, y);
        targets.column_mut(j).copy_from_slice(&v);
        ts.push(t);
        xs.extend(x);
    }
    let input = net.encode_batch(&ts, &xs);
    let (loss, grads) = net.loss_and_grad(input, &targets);
    Ok(StepLoss { loss, grads })
}

/// Trained network plus the per-step minibatch losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpNetwork,
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// Median of the last 10% of the trace is below the median of the first 10%.
    pub fn loss_decreased(&self) -> bool {
        let n = self.losses.len();
        let k = (n / 10).max(1);
        if n < 2 {
            return false;
        }
        median(&self.losses[n - k..]) < median(&self.losses[..k])
    }
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grads[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Train a fresh network on the first `config.n` rows of `data`.
///
/// `perturbation_bound` is the `L` entering the output bound; use 0 for
/// mixtures. Initialisation and minibatches come from streams derived from
/// `config.seed`.
pub fn train(
    data: &Samples,
    config: &TrainConfig,
    schedule: &VarianceSchedule,
    perturbation_bound: f64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.len() < config.n {
        return Err(Error::Config(format!(
            "train.n = {} exceeds the {} available data points",
            config.n,
            data.len()
        )));
    }
    crate::error::check_finite(data.as_slice())?;
    let d = data.dim();
    let data = if data.len() == config.n {
        data.clone()
    } else {
        data.select(&(0..config.n).collect::<Vec<_>>())
    };
    let mut init_rng = stream(config.seed, "train-init");
    let mut net = MlpNetwork::random(
        d,
        &config.hidden,
        input_box_for(config.n.max(2)),
        output_bound(perturbation_bound, config.n.max(2)),
        &mut init_rng,
    )?;
    let mut rng = stream(config.seed, "train-batches");
    let mut adam = Adam::new(net.n_params());
    let mut params = net.flatten();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx = rand::seq::index::sample(&mut rng, config.n, config.batch).into_vec();
        let batch = data.select(&idx);
        let sl = cfm_step_loss(&net, &batch, schedule, &mut rng)?;
        losses.push(sl.loss);
        let g = sl.grads.flatten();
        if !sl.loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                loss: sl.loss,
                trace: losses,
            });
        }
        let lr = config.lr_at(step);
        if lr > 0.0 {
            adam.update(&mut params, &g, lr);
            net.set_flat(&params)?;
        }
    }
    Ok(TrainOutcome { net, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn sched() -> VarianceSchedule {
        VarianceSchedule::geometric(0.05, 1.0).unwrap()
    }

    #[test]
    fn zero_net_zero_data_loss() {
        // y = 0 gives the target q·X_t with X_t = σ_t ε.
        let net = MlpNetwork::zeros(2, &[4], 3.0, 100.0).unwrap();
        let batch = Samples::zeros(64, 2);
        let s = sched();
        let sl = cfm_step_loss(&net, &batch, &s, &mut from_seed(3)).unwrap();
        let mut rng = from_seed(3);
        let mut expected = 0.0;
        for _ in 0..64 {
            let t: f64 = rng.random();
            let eps = standard_normal_vec(&mut rng, 2);
            let sig = s.sigma(t).unwrap();
            let q = s.log_quotient(t).unwrap();
            expected += eps.iter().map(|e| (q * sig * e).powi(2)).sum::<f64>();
        }
        expected /= 64.0;
        assert!((sl.loss - expected).abs() < 1e-12 * expected.max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = from_seed(8);
        let mut net = MlpNetwork::random(2, &[8], 3.0, 100.0, &mut rng).unwrap();
        for v in net.shifts_mut() {
            for e in v.iter_mut() {
                *e = 0.1;
            }
        }
        let data = Samples::new(2, standard_normal_vec(&mut rng, 32)).unwrap();
        let s = sched();
        let sl = cfm_step_loss(&net, &data, &s, &mut from_seed(11)).unwrap();
        let g = sl.grads.flatten();
        let p0 = net.flatten();
        let h = 1e-5;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            net.set_flat(&p).unwrap();
            let lp = cfm_step_loss(&net, &data, &s, &mut from_seed(11)).unwrap().loss;
            p[k] -= 2.0 * h;
            net.set_flat(&p).unwrap();
            let lm = cfm_step_loss(&net, &data, &s, &mut from_seed(11)).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-3), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn zero_lr_leaves_net_unchanged() {
        let data = Samples::new(1, standard_normal_vec(&mut from_seed(1), 50)).unwrap();
        let mut cfg = TrainConfig::new(50);
        cfg.batch = 10;
        cfg.steps = 5;
        cfg.lr = 0.0;
        cfg.hidden = vec![4];
        let out = train(&data, &cfg, &sched(), 0.0).unwrap();
        let fresh = MlpNetwork::random(
            1,
            &[4],
            input_box_for(50),
            output_bound(0.0, 50),
            &mut stream(0, "train-init"),
        )
        .unwrap();
        assert_eq!(out.net, fresh);
        assert_eq!(out.losses.len(), 5);
    }

    #[test]
    fn training_is_deterministic_and_validated() {
        let data = Samples::new(1, standard_normal_vec(&mut from_seed(1), 100)).unwrap();
        let mut cfg = TrainConfig::new(100);
        cfg.batch = 20;
        cfg.steps = 20;
        cfg.hidden = vec![8];
        let a = train(&data, &cfg, &sched(), 0.0).unwrap();
        let b = train(&data, &cfg, &sched(), 0.0).unwrap();
        assert_eq!(a.losses, b.losses);
        cfg.batch = 101;
        assert!(train(&data, &cfg, &sched(), 0.0).is_err());
    }

    #[test]
    fn cosine_schedule_ends_near_zero() {
        let mut cfg = TrainConfig::new(10);
        cfg.steps = 100;
        assert_eq!(cfg.lr_at(0), cfg.lr);
        assert!(cfg.lr_at(99) < 1e-6);
        cfg.lr_schedule = LrSchedule::Constant;
        assert_eq!(cfg.lr_at(99), cfg.lr);
    }
}
