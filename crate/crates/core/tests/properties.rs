use std::f64::consts::E;

use flowlab::eval::{sliced_w1, w1_1d, w1_assignment};
use flowlab::field::{is_posterior_moments, MarginalField};
use flowlab::lipschitz::{b_matrix, gronwall_factor, probe_set};
use flowlab::nn::{objective_gap_check, output_bound, train, MlpNetwork, TrainConfig};
use flowlab::quadrature::composite_gauss_legendre;
use flowlab::rng::{from_seed, standard_normal_vec, stream};
use flowlab::targets::CatalogPerturbation;
use flowlab::{GaussianMixture, PerturbedGaussian, Samples, TargetModel, VarianceSchedule, VelocityField};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn schedules(sigma_min: f64) -> Vec<VarianceSchedule> {
    vec![
        VarianceSchedule::geometric(sigma_min, 1.0).unwrap(),
        VarianceSchedule::linear(sigma_min, 1.0).unwrap(),
        VarianceSchedule::poly(vec![1.0, -(1.0 - sigma_min) / 2.0, -(1.0 - sigma_min) / 2.0], 2.0).unwrap(),
    ]
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn schedules_are_positive_decreasing_with_exact_ends() {
    for s in schedules(1e-3) {
        assert!((s.sigma(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((s.sigma(1.0).unwrap() - 1e-3).abs() < 1e-12);
        for i in 0..=10_000 {
            let t = i as f64 / 10_000.0;
            assert!(s.sigma(t).unwrap() > 0.0);
            assert!(s.sigma_prime(t).unwrap() <= 0.0, "{:?} at {t}", s.kind());
        }
    }
}

#[test]
fn geometric_helper_ratio_bound() {
    for &sm in &[0.5, 1e-2, 1e-6] {
        let s = VarianceSchedule::geometric(sm, 1.0).unwrap();
        let bound = (-sm.ln()).max(E * E);
        for i in 0..=10_000 {
            let t = i as f64 / 10_000.0;
            let sig = s.sigma(t).unwrap();
            assert!(t / (t * t + sig * sig) <= bound);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedule_integral_identity(log_sm in -9.0f64..-0.05) {
        let sm = log_sm.exp();
        for s in schedules(sm) {
            let a = s.audit(1e-10).unwrap();
            prop_assert!((a.integral + log_sm).abs() < 1e-6);
        }
    }

    #[test]
    fn gronwall_is_monotone(a in 0.0f64..700.0, gap in 1e-6f64..50.0) {
        let lo = gronwall_factor(a).unwrap();
        let hi = gronwall_factor(a + gap).unwrap();
        prop_assert!(hi.log_value > lo.log_value);
        prop_assert!(hi.value >= lo.value);
    }

    #[test]
    fn triangle_inequality_for_exact_estimators(seed in any::<u64>(), m in 2usize..24) {
        let mut rng = from_seed(seed);
        let make = |rng: &mut _, d| Samples::new(d, standard_normal_vec(rng, m * d)).unwrap();
        let (a, b, c) = (make(&mut rng, 1), make(&mut rng, 1), make(&mut rng, 1));
        let f = |x: &Samples, y: &Samples| w1_1d(x.as_slice(), y.as_slice()).unwrap();
        prop_assert!(f(&a, &c) <= f(&a, &b) + f(&b, &c) + 1e-12);
        let (a, b, c) = (make(&mut rng, 3), make(&mut rng, 3), make(&mut rng, 3));
        let g = |x: &Samples, y: &Samples| w1_assignment(x, y).unwrap();
        prop_assert!(g(&a, &c) <= g(&a, &b) + g(&b, &c) + 1e-12);
    }

    #[test]
    fn sorted_and_assignment_agree_on_the_line(seed in any::<u64>(), m in 1usize..64) {
        let mut rng = from_seed(seed);
        let a = Samples::new(1, standard_normal_vec(&mut rng, m)).unwrap();
        let b = Samples::new(1, (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        prop_assert_eq!(w1_1d(a.as_slice(), b.as_slice()).unwrap(), w1_assignment(&a, &b).unwrap());
    }

    #[test]
    fn objective_identity_for_arbitrary_nets(seed in any::<u64>(), width in 2usize..12) {
        let mix = GaussianMixture::isotropic(vec![0.6, 0.4], vec![vec![-1.0], vec![1.5]], vec![0.3, 0.2]).unwrap();
        let schedule = VarianceSchedule::geometric(0.1, 1.0).unwrap();
        let net = MlpNetwork::random(1, &[width, width], 3.0, 30.0, &mut from_seed(seed)).unwrap();
        let gap = objective_gap_check(&net, &mix, &schedule, 1e-6).unwrap();
        prop_assert!(gap.residual.abs() < 1e-6);
    }
}

#[test]
fn perturbed_gradients_match_finite_differences() {
    let mut rng = stream(1, "grad-points");
    for p in [
        CatalogPerturbation::Sin { amplitude: 0.3 },
        CatalogPerturbation::CosSum { amplitude: 0.2 },
        CatalogPerturbation::Bump { amplitude: 0.4 },
    ] {
        let target = TargetModel::Perturbed(PerturbedGaussian::from_catalog(3, p).unwrap());
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = target.grad_log_density(&x).unwrap();
            for i in 0..3 {
                let h = 1e-5 * (1.0 + x[i].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (target.log_density_unnorm(&xp).unwrap() - target.log_density_unnorm(&xm).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
        }
    }
}

#[test]
fn mixture_sample_moments_within_four_se() {
    let mix = GaussianMixture::new(
        vec![0.3, 0.7],
        vec![vec![-2.0, 1.0], vec![1.0, -0.5]],
        vec![
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.3, -0.1, -0.1, 0.6]),
        ],
    )
    .unwrap();
    let n = 20_000;
    let s = mix.sample(&mut stream(2, "moments"), n);
    let nf = n as f64;
    let mean: Vec<f64> = (0..2).map(|j| s.column(j).iter().sum::<f64>() / nf).collect();
    let true_mean = mix.mean();
    let true_cov = mix.covariance();
    for i in 0..2 {
        let se = (true_cov[(i, i)] / nf).sqrt();
        assert!((mean[i] - true_mean[i]).abs() < 4.0 * se);
        for j in 0..2 {
            let prods: Vec<f64> = s.rows().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).collect();
            let c = prods.iter().sum::<f64>() / nf;
            let sd = (prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
            assert!((c - true_cov[(i, j)]).abs() < 4.0 * sd / nf.sqrt(), "cov[{i},{j}] = {c}");
        }
    }
}

fn mixture_density_1d(mix: &GaussianMixture, s: &VarianceSchedule, t: f64, x: f64) -> f64 {
    let a = t;
    let sig = s.sigma(t).unwrap();
    (0..mix.n_components())
        .map(|k| {
            let m = mix.means()[k][0];
            let v = a * a * mix.covariances()[k][(0, 0)] + sig * sig;
            mix.weights()[k] * (-(x - a * m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        })
        .sum()
}

#[test]
fn exact_mixture_field_solves_the_continuity_equation() {
    let mix = GaussianMixture::isotropic(vec![0.4, 0.6], vec![vec![-1.5], vec![1.0]], vec![0.2, 0.5]).unwrap();
    let s = VarianceSchedule::geometric(0.05, 1.0).unwrap();
    let field = MarginalField::exact(s.clone(), mix.clone());
    let h = 1e-4;
    let flux = |t: f64, x: f64| mixture_density_1d(&mix, &s, t, x) * field.velocity(t, &[x])[0];
    let mut worst = 0.0f64;
    for i in 1..20 {
        let t = i as f64 / 20.0;
        for j in 0..=40 {
            let x = -4.0 + 0.2 * j as f64;
            let dt = (mixture_density_1d(&mix, &s, t + h, x) - mixture_density_1d(&mix, &s, t - h, x)) / (2.0 * h);
            let dx = (flux(t, x + h) - flux(t, x - h)) / (2.0 * h);
            worst = worst.max((dt + dx).abs());
        }
    }
    assert!(worst < 1e-3, "continuity residual {worst}");
}

#[test]
fn importance_error_shrinks_at_root_n() {
    let l = 0.2;
    let target = PerturbedGaussian::from_catalog(1, CatalogPerturbation::Sin { amplitude: l }).unwrap();
    let s = VarianceSchedule::geometric(0.1, 1.0).unwrap();
    let (t, x) = (0.6, 0.3);
    let (a, _) = s.mu_coeffs(t).unwrap();
    let sig = s.sigma(t).unwrap();
    let rule = composite_gauss_legendre(64, 8, -12.0, 12.0);
    let post = |y: f64| (-0.5 * y * y - l * y.sin() - (x - a * y).powi(2) / (2.0 * sig * sig)).exp();
    let z = rule.integrate(post);
    let exact = rule.integrate(|y| y * post(y)) / z;
    let ns = [100usize, 1000, 10_000, 100_000];
    let reps = 30;
    let mut rng = stream(3, "is-consistency");
    let rmse: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let sq: f64 = (0..reps)
                .map(|_| {
                    let m = is_posterior_moments(&s, t, &[x], &target, n, &mut rng).unwrap();
                    (m.mean[0] - exact).powi(2)
                })
                .sum();
            (sq / reps as f64).sqrt()
        })
        .collect();
    let slope = loglog_slope(&ns.map(|n| n as f64), &rmse);
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}, rmse {rmse:?}");
}

#[test]
fn b_matrix_off_diagonal_vanishes_at_time_zero() {
    let s = VarianceSchedule::geometric(0.01, 1.0).unwrap();
    let correlated = GaussianMixture::new(
        vec![1.0],
        vec![vec![0.0, 0.0]],
        vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0])],
    )
    .unwrap();
    let perturbed = TargetModel::Perturbed(
        PerturbedGaussian::from_catalog(2, CatalogPerturbation::CosSum { amplitude: 0.2 }).unwrap(),
    );
    for field in [
        MarginalField::exact(s.clone(), correlated),
        MarginalField::new(s.clone(), perturbed, 500, 1).unwrap(),
    ] {
        let probes = probe_set(&field, 64, 20, &mut from_seed(9));
        let b = b_matrix(&field, 0.0, &probes).unwrap();
        assert_eq!(b.entries[(0, 1)], 0.0);
        assert_eq!(b.entries[(1, 0)], 0.0);
    }
}

#[test]
fn sliced_standard_error_halves_when_projections_quadruple() {
    let mut rng = from_seed(11);
    let a = Samples::new(3, standard_normal_vec(&mut rng, 3 * 400)).unwrap();
    let b = Samples::new(3, standard_normal_vec(&mut rng, 3 * 400).iter().map(|v| 1.5 * v + 0.3).collect()).unwrap();
    let ks = [16usize, 32, 64, 128, 256, 512];
    let ses: Vec<f64> = ks.iter().map(|&k| sliced_w1(&a, &b, k, &mut from_seed(k as u64)).unwrap().1).collect();
    let slope = loglog_slope(&ks.map(|k| k as f64), &ses);
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
}

#[test]
fn trained_network_respects_output_bound() {
    let mix = GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-2.0, 0.0], vec![2.0, 0.0]], vec![0.25, 0.25]).unwrap();
    let data = mix.sample(&mut from_seed(12), 500);
    let mut cfg = TrainConfig::new(500);
    cfg.steps = 200;
    cfg.batch = 64;
    cfg.hidden = vec![16, 16];
    let net = train(&data, &cfg, &VarianceSchedule::geometric(0.1, 1.0).unwrap(), 0.0).unwrap().net;
    let bound = output_bound(0.0, 500);
    assert_eq!(net.output_bound(), bound);
    let mut rng = from_seed(13);
    for _ in 0..100_000 {
        let t: f64 = rng.random();
        let x = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        assert!(net.velocity(t, &x).iter().all(|v| v.abs() <= bound));
    }
}
