//! Train a velocity network on a two-component mixture, save and reload the
//! checkpoint, and compare generated samples with the target.
//!
//! `cargo run --release --example train_mixture -- 2000` trains for 2000 steps.

use std::time::Instant;

use flowlab::eval::sliced_w1;
use flowlab::flow::{push_samples, IntegratorConfig};
use flowlab::nn::{load_checkpoint, save_checkpoint, train, TrainConfig};
use flowlab::rng::{standard_normal_vec, stream};
use flowlab::{GaussianMixture, Samples, VarianceSchedule};

fn main() -> flowlab::Result<()> {
    let target = GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-2.0, 0.0], vec![2.0, 0.0]], vec![0.25, 0.25])?;
    let schedule = VarianceSchedule::geometric(0.05, 1.0)?;
    let data = target.sample(&mut stream(1, "data"), 5000);

    let mut cfg = TrainConfig::new(5000);
    cfg.steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    cfg.seed = 1;
    let start = Instant::now();
    let outcome = train(&data, &cfg, &schedule, 0.0)?;
    println!("trained {} steps in {:.1?}", cfg.steps, start.elapsed());
    let k = outcome.losses.len() / 10;
    println!(
        "loss: first 10% mean {:.4}, last 10% mean {:.4}",
        outcome.losses[..k].iter().sum::<f64>() / k as f64,
        outcome.losses[outcome.losses.len() - k..].iter().sum::<f64>() / k as f64
    );

    let m = 2000;
    let start = Instant::now();
    let generated = push_samples(&outcome.net, &mut stream(1, "latent"), m, &IntegratorConfig::default())?;
    println!("pushed {m} samples in {:.1?}", start.elapsed());

    let path = std::env::temp_dir().join("flowlab_train_mixture.ckpt");
    save_checkpoint(&outcome.net, &path)?;
    let reloaded = load_checkpoint(&path)?;
    println!("checkpoint round trip exact: {}", reloaded.flatten() == outcome.net.flatten());
    let reference = target.sample(&mut stream(1, "reference"), m);
    let latent = Samples::new(2, standard_normal_vec(&mut stream(1, "baseline"), 2 * m))?;
    let (w_gen, se_gen) = sliced_w1(&generated, &reference, 64, &mut stream(1, "proj"))?;
    let (w_lat, se_lat) = sliced_w1(&latent, &reference, 64, &mut stream(1, "proj"))?;
    println!("sliced W1 generated vs target: {w_gen:.4} ± {se_gen:.4}");
    println!("sliced W1 latent    vs target: {w_lat:.4} ± {se_lat:.4}");
    Ok(())
}
