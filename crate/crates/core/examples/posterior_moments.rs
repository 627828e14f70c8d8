//! Posterior moments of Y given X_t = x: closed form for mixtures, importance
//! sampling for perturbed Gaussians, and the Jacobian they determine.

use flowlab::field::{fd_jacobian, is_posterior_moments, jacobian_from_moments};
use flowlab::rng::stream;
use flowlab::targets::CatalogPerturbation;
use flowlab::{GaussianMixture, MarginalField, PerturbedGaussian, TargetModel, VarianceSchedule, VelocityField};

fn main() -> flowlab::Result<()> {
    let schedule = VarianceSchedule::geometric(0.01, 1.0)?;
    let mix = GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-2.0, 0.0], vec![2.0, 0.0]], vec![0.25, 0.25])?;
    let field = MarginalField::exact(schedule.clone(), mix);
    let x = [0.3, -0.4];
    println!("exact mixture field at x = {x:?}");
    for &t in &[0.0, 0.5, 0.9, 0.99] {
        let m = field.moments(t, &x)?;
        let v = field.velocity(t, &x);
        println!(
            "  t={t:<5} mean=({:+.4}, {:+.4}) var=({:.4}, {:.4}) v=({:+.4}, {:+.4})",
            m.mean[0], m.mean[1], m.cov[(0, 0)], m.cov[(1, 1)], v[0], v[1]
        );
    }
    let t = 0.7;
    let j = field.jacobian(t, &x)?;
    let fd = fd_jacobian(&field, t, &x, 1e-5)?;
    println!("  Jacobian at t={t}: analytic vs finite differences differ by {:.2e}", (&j - fd).norm());

    let target = PerturbedGaussian::from_catalog(2, CatalogPerturbation::Sin { amplitude: 0.3 })?;
    println!("\nperturbed Gaussian (0.3 sin y1), t = {t}");
    for &n in &[100, 1_000, 10_000] {
        let m = is_posterior_moments(&schedule, t, &x, &target, n, &mut stream(1, "is"))?;
        println!(
            "  n={n:<6} mean=({:+.4}, {:+.4}) ess={:.0} degenerate={}",
            m.mean[0],
            m.mean[1],
            m.ess_value(),
            m.degenerate
        );
    }
    let frozen = MarginalField::new(schedule.clone(), TargetModel::Perturbed(target), 4000, 1)?;
    let m = frozen.moments(t, &x)?;
    let j = jacobian_from_moments(&schedule, t, &m)?;
    println!("  frozen-draw field Jacobian diagonal: ({:.4}, {:.4})", j[(0, 0)], j[(1, 1)]);
    Ok(())
}
