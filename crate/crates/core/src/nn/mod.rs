//! ReLU networks with shifted activations and clipped inputs and outputs.
//!
//! A network with architecture `(p_0, …, p_{L+1})` is
//! `f = W_L ∘ φ_{v_L} ∘ W_{L-1} ∘ … ∘ W_1 ∘ φ_{v_1} ∘ W_0`, where
//! `φ_v(z)_i = max(z_i - v_i, 0)`. There are no biases; the shift vectors play
//! that role. The velocity network reads `(clip(x)/c, t)` with
//! `clip(x) = x - φ(x - c) + φ(-x - c)` and clamps every output component to
//! `±output_bound`.

mod checkpoint;
mod objective;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use objective::{objective_gap_check, ObjectiveGap};
pub use train::{cfm_step_loss, train, LrSchedule, StepLoss, TrainConfig, TrainOutcome};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::field::{FieldKind, VelocityField};

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Per-coordinate clamp to `[-c, c]` written as one ReLU layer.
pub fn input_clip(x: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("clip radius c = {c} must be positive")));
    }
    Ok(x.iter().map(|&xi| xi - relu(xi - c) + relu(-xi - c)).collect())
}

/// `e^{2L} log³n + (1 + e^{2L}) log²n + log n + 1`.
pub fn output_bound(l: f64, n: usize) -> f64 {
    let ln = (n as f64).ln();
    let e = (2.0 * l).exp();
    e * ln.powi(3) + (1.0 + e) * ln * ln + ln + 1.0
}

/// Default input clip radius `log n`.
pub fn input_box_for(n: usize) -> f64 {
    (n as f64).ln()
}

/// Plain ReLU network with the velocity-field input/output conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    arch: Vec<usize>,
    /// `W_0, …, W_L`; `W_i` is `p_{i+1} × p_i`.
    weights: Vec<DMatrix<f64>>,
    /// `v_1, …, v_L`; `v_i` has length `p_i`.
    shifts: Vec<DVector<f64>>,
    input_box: f64,
    output_bound: f64,
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub shifts: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            weights: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            shifts: net.shifts.iter().map(|v| DVector::zeros(v.len())).collect(),
        }
    }

    /// Flattened in checkpoint order: `W_0, v_1, W_1, …, v_L, W_L` (row-major).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_parts(&self.weights, &self.shifts)
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn flatten_parts(weights: &[DMatrix<f64>], shifts: &[DVector<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, w) in weights.iter().enumerate() {
        if i > 0 {
            out.extend(shifts[i - 1].iter());
        }
        for r in 0..w.nrows() {
            out.extend(w.row(r).iter());
        }
    }
    out
}

/// Activations retained for the backward pass.
pub(crate) struct ForwardCache {
    /// Network input, `p_0 × B`.
    input: DMatrix<f64>,
    /// Pre-activations `W_{i-1} a_{i-1}` for `i = 1..=L`.
    pre: Vec<DMatrix<f64>>,
    /// Post-activations `φ_{v_i}(pre_i)`.
    post: Vec<DMatrix<f64>>,
    /// Unclamped network output, `d × B`.
    raw: DMatrix<f64>,
}

impl MlpNetwork {
    /// Validate shapes and assemble a network.
    pub fn from_parts(
        arch: Vec<usize>,
        weights: Vec<DMatrix<f64>>,
        shifts: Vec<DVector<f64>>,
        input_box: f64,
        output_bound: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(format!("architecture mismatch: {m}")));
        if arch.len() < 2 || arch.contains(&0) {
            return bad(format!("{arch:?} needs at least input and output widths, all positive"));
        }
        let d = arch[arch.len() - 1];
        if arch[0] != d + 1 {
            return bad(format!("input width {} must be output width {d} + 1", arch[0]));
        }
        let l = arch.len() - 2;
        if weights.len() != l + 1 || shifts.len() != l {
            return bad(format!(
                "{} hidden layers need {} weight matrices and {} shift vectors",
                l,
                l + 1,
                l
            ));
        }
        for (i, w) in weights.iter().enumerate() {
            if w.nrows() != arch[i + 1] || w.ncols() != arch[i] {
                return bad(format!(
                    "W_{i} is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    arch[i + 1],
                    arch[i]
                ));
            }
        }
        for (i, v) in shifts.iter().enumerate() {
            if v.len() != arch[i + 1] {
                return bad(format!("v_{} has length {}, expected {}", i + 1, v.len(), arch[i + 1]));
            }
        }
        if !(input_box > 0.0 && input_box.is_finite()) || !(output_bound > 0.0) {
            return Err(Error::Config(format!(
                "input box {input_box} and output bound {output_bound} must be positive"
            )));
        }
        Ok(Self {
            arch,
            weights,
            shifts,
            input_box,
            output_bound,
        })
    }

    /// All weights and shifts zero.
    pub fn zeros(d: usize, hidden: &[usize], input_box: f64, output_bound: f64) -> Result<Self> {
        let arch = Self::arch_for(d, hidden);
        let weights = (0..arch.len() - 1)
            .map(|i| DMatrix::zeros(arch[i + 1], arch[i]))
            .collect();
        let shifts = hidden.iter().map(|&p| DVector::zeros(p)).collect();
        Self::from_parts(arch, weights, shifts, input_box, output_bound)
    }

    /// Fan-in-scaled uniform weights `U(-√(6/p_i), √(6/p_i))`, zero shifts.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        hidden: &[usize],
        input_box: f64,
        output_bound: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(d, hidden, input_box, output_bound)?;
        for w in &mut net.weights {
            let r = (6.0 / w.ncols() as f64).sqrt();
            let u = Uniform::new_inclusive(-r, r).expect("finite range");
            for v in w.iter_mut() {
                *v = u.sample(rng);
            }
        }
        Ok(net)
    }

    fn arch_for(d: usize, hidden: &[usize]) -> Vec<usize> {
        let mut arch = vec![d + 1];
        arch.extend_from_slice(hidden);
        arch.push(d);
        arch
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch[self.arch.len() - 1]
    }

    pub fn hidden_layers(&self) -> usize {
        self.arch.len() - 2
    }

    pub fn input_box(&self) -> f64 {
        self.input_box
    }

    pub fn output_bound(&self) -> f64 {
        self.output_bound
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn shifts(&self) -> &[DVector<f64>] {
        &self.shifts
    }

    pub fn weights_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.weights
    }

    pub fn shifts_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.shifts
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.shifts.iter().map(|v| v.len()).sum::<usize>()
    }

    /// Parameters in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_parts(&self.weights, &self.shifts)
    }

    /// Overwrite parameters from a vector in checkpoint order.
    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::SizeMismatch(format!(
                "expected {} parameters, found {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut k = 0;
        for i in 0..self.weights.len() {
            if i > 0 {
                for v in self.shifts[i - 1].iter_mut() {
                    *v = params[k];
                    k += 1;
                }
            }
            let w = &mut self.weights[i];
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = params[k];
                    k += 1;
                }
            }
        }
        Ok(())
    }

    /// Network input column for one point: `(clip(x)/c, t)`.
    fn encode(&self, t: f64, x: &[f64], col: &mut [f64]) {
        let c = self.input_box;
        for (o, &xi) in col.iter_mut().zip(x) {
            *o = (xi - relu(xi - c) + relu(-xi - c)) / c;
        }
        col[x.len()] = t;
    }

    /// Encode a batch into a `p_0 × B` matrix.
    pub(crate) fn encode_batch(&self, ts: &[f64], xs: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let b = ts.len();
        let mut input = DMatrix::zeros(d + 1, b);
        let mut col = vec![0.0; d + 1];
        for j in 0..b {
            self.encode(ts[j], &xs[j * d..(j + 1) * d], &mut col);
            input.column_mut(j).copy_from_slice(&col);
        }
        input
    }

    pub(crate) fn forward_cached(&self, input: DMatrix<f64>) -> ForwardCache {
        let l = self.hidden_layers();
        let mut pre = Vec::with_capacity(l);
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(l);
        for i in 0..l {
            let z = if i == 0 { &self.weights[0] * &input } else { &self.weights[i] * &post[i - 1] };
            let mut a = z.clone();
            for (r, mut row) in a.row_iter_mut().enumerate() {
                let v = self.shifts[i][r];
                for e in row.iter_mut() {
                    *e = relu(*e - v);
                }
            }
            pre.push(z);
            post.push(a);
        }
        let raw = if l == 0 { &self.weights[0] * &input } else { &self.weights[l] * &post[l - 1] };
        ForwardCache { input, pre, post, raw }
    }

    fn clamp(&self, z: f64) -> f64 {
        let b = self.output_bound;
        z - relu(z - b) + relu(-z - b)
    }

    /// Velocity at a single point.
    pub fn forward(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_unit_interval(t)?;
        if x.len() != self.dim() {
            return Err(Error::SizeMismatch(format!(
                "network expects dimension {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.forward_unchecked(t, x))
    }

    fn forward_unchecked(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.arch[0]];
        self.encode(t, x, &mut h);
        let l = self.hidden_layers();
        for i in 0..=l {
            let w = &self.weights[i];
            let mut z = vec![0.0; w.nrows()];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, hc) in h.iter().enumerate() {
                    acc += w[(r, c)] * hc;
                }
                *zr = if i < l { relu(acc - self.shifts[i][r]) } else { self.clamp(acc) };
            }
            h = z;
        }
        h
    }

    /// Batched forward pass; `xs` is row-major `B × d`. Returns row-major `B × d`.
    pub fn forward_batch(&self, ts: &[f64], xs: &[f64]) -> Vec<f64> {
        let d = self.dim();
        assert_eq!(xs.len(), ts.len() * d, "batch shape mismatch");
        let cache = self.forward_cached(self.encode_batch(ts, xs));
        let mut out = Vec::with_capacity(xs.len());
        for j in 0..ts.len() {
            out.extend(cache.raw.column(j).iter().map(|&z| self.clamp(z)));
        }
        out
    }

    /// Loss `mean_j |clamp(f(input_j)) - target_j|²` and its parameter gradient.
    ///
    /// ReLU and clamp kinks get derivative 0 on the inactive side, including
    /// the kink itself.
    pub(crate) fn loss_and_grad(&self, input: DMatrix<f64>, targets: &DMatrix<f64>) -> (f64, Gradients) {
        let b = input.ncols();
        let cache = self.forward_cached(input);
        let bound = self.output_bound;
        let scale = 1.0 / b as f64;
        let mut loss = 0.0;
        let mut g = DMatrix::zeros(cache.raw.nrows(), b);
        for j in 0..b {
            for r in 0..cache.raw.nrows() {
                let z = cache.raw[(r, j)];
                let diff = self.clamp(z) - targets[(r, j)];
                loss += diff * diff;
                if z.abs() <= bound {
                    g[(r, j)] = 2.0 * scale * diff;
                }
            }
        }
        loss *= scale;
        let l = self.hidden_layers();
        let mut grads = Gradients::zeros_like(self);
        for i in (0..=l).rev() {
            let a_prev = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            grads.weights[i] = &g * a_prev.transpose();
            if i == 0 {
                break;
            }
            let mut ga = self.weights[i].transpose() * &g;
            let shifts = &self.shifts[i - 1];
            let pre = &cache.pre[i - 1];
            let mut gv = DVector::zeros(shifts.len());
            for r in 0..ga.nrows() {
                let v = shifts[r];
                let mut acc = 0.0;
                for j in 0..b {
                    if pre[(r, j)] - v > 0.0 {
                        acc -= ga[(r, j)];
                    } else {
                        ga[(r, j)] = 0.0;
                    }
                }
                gv[r] = acc;
            }
            grads.shifts[i - 1] = gv;
            g = ga;
        }
        (loss, grads)
    }
}

impl VelocityField for MlpNetwork {
    fn dim(&self) -> usize {
        MlpNetwork::dim(self)
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Learned
    }

    fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.forward_unchecked(t.clamp(0.0, 1.0), x)
    }

    fn velocity_batch(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let ts = vec![t.clamp(0.0, 1.0); xs.len() / self.dim()];
        self.forward_batch(&ts, xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn clip_examples() {
        assert_eq!(input_clip(&[5.0, -5.0, 1.0], 3.0).unwrap(), vec![3.0, -3.0, 1.0]);
        assert!(input_clip(&[1.0], 0.0).is_err());
    }

    #[test]
    fn bound_formula() {
        let ln = 100f64.ln();
        let expected = ln.powi(3) + 2.0 * ln * ln + ln + 1.0;
        assert!((output_bound(0.0, 100) - expected).abs() < 1e-12);
        assert!(output_bound(0.2, 100) > expected);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNetwork::zeros(2, &[8, 8], 3.0, 10.0).unwrap();
        assert_eq!(net.forward(0.3, &[1.0, -4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_network_reads_scaled_clip() {
        let w = DMatrix::from_row_slice(1, 2, &[2.0, 0.5]);
        let net = MlpNetwork::from_parts(vec![2, 1], vec![w], vec![], 4.0, 100.0).unwrap();
        let out = net.forward(0.2, &[10.0]).unwrap();
        assert!((out[0] - (2.0 * 4.0 / 4.0 + 0.5 * 0.2)).abs() < 1e-15);
        let out = net.forward(0.2, &[1.0]).unwrap();
        assert!((out[0] - (2.0 * 0.25 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = DMatrix::zeros(3, 2);
        assert!(MlpNetwork::from_parts(vec![2, 1], vec![w], vec![], 1.0, 1.0).is_err());
        assert!(MlpNetwork::from_parts(vec![3, 1], vec![DMatrix::zeros(1, 3)], vec![], 1.0, 1.0).is_err());
    }

    #[test]
    fn outputs_respect_bound() {
        let mut rng = from_seed(4);
        let mut net = MlpNetwork::random(2, &[16, 16], 2.0, 0.5, &mut rng).unwrap();
        for w in net.weights_mut() {
            *w *= 20.0;
        }
        let mut max = 0.0f64;
        for k in 0..2000 {
            let x = [(k as f64 * 0.37).sin() * 5.0, (k as f64 * 0.11).cos() * 5.0];
            for v in net.forward(k as f64 / 2000.0, &x).unwrap() {
                max = max.max(v.abs());
            }
        }
        assert!(max <= 0.5);
        assert!(max > 0.4);
    }

    #[test]
    fn batch_matches_pointwise() {
        let mut rng = from_seed(5);
        let net = MlpNetwork::random(2, &[8, 4], 3.0, 50.0, &mut rng).unwrap();
        let ts = [0.1, 0.7, 1.0];
        let xs = [0.5, -1.0, 3.5, 2.0, -0.2, 0.0];
        let batch = net.forward_batch(&ts, &xs);
        for j in 0..3 {
            let p = net.forward(ts[j], &xs[2 * j..2 * j + 2]).unwrap();
            assert!((p[0] - batch[2 * j]).abs() < 1e-14 && (p[1] - batch[2 * j + 1]).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = from_seed(6);
        let net = MlpNetwork::random(1, &[3, 2], 1.0, 5.0, &mut rng).unwrap();
        let flat = net.flatten();
        assert_eq!(flat.len(), net.n_params());
        assert_eq!(flat.len(), 2 * 3 + 3 + 3 * 2 + 2 + 2);
        let mut other = MlpNetwork::zeros(1, &[3, 2], 1.0, 5.0).unwrap();
        other.set_flat(&flat).unwrap();
        assert_eq!(other, net);
    }
}
