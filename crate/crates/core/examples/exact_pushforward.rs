//! Push latent Gaussians through the exact mixture field and watch the
//! distance to the target shrink as σ_min does.

use flowlab::eval::w1_1d;
use flowlab::flow::{push_samples, trajectory, IntegratorConfig, Method};
use flowlab::rng::stream;
use flowlab::{GaussianMixture, MarginalField, VarianceSchedule};

fn main() -> flowlab::Result<()> {
    let mix = GaussianMixture::isotropic(vec![0.4, 0.6], vec![vec![-2.0], vec![1.5]], vec![0.3, 0.5])?;
    let m = 2000;
    let reference = mix.sample(&mut stream(1, "reference"), m);
    let baseline = w1_1d(mix.sample(&mut stream(1, "baseline"), m).as_slice(), reference.as_slice())?;
    println!("target self-distance at m={m}: {baseline:.4}");
    for &sm in &[0.5, 0.1, 0.01, 0.001] {
        let field = MarginalField::exact(VarianceSchedule::geometric(sm, 1.0)?, mix.clone());
        for cfg in [IntegratorConfig::new(256, Method::Rk4)?, IntegratorConfig::new(32, Method::Euler)?] {
            let pushed = push_samples(&field, &mut stream(1, "latent"), m, &cfg)?;
            let w = w1_1d(pushed.as_slice(), reference.as_slice())?;
            println!("  σmin={sm:<6} {:>5}/{:<3} W1 = {w:.4}", cfg.method(), cfg.steps());
        }
    }

    let field = MarginalField::exact(VarianceSchedule::geometric(0.01, 1.0)?, mix);
    let path = trajectory(&field, &[0.2], &IntegratorConfig::rk4(8)?)?;
    println!("\none trajectory from z = 0.2:");
    for (t, x) in path {
        println!("  t={t:.3} x={:+.4}", x[0]);
    }
    Ok(())
}
