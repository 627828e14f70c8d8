//! Distance to the target over a grid of sample sizes, with σ_min tied to n.
//! Uses the exact-field control arm; pass `trained` to train at every cell.

use flowlab::eval::{rate_sweep, EvalConfig, SweepArm, SweepConfig};
use flowlab::flow::IntegratorConfig;
use flowlab::nn::TrainConfig;
use flowlab::{GaussianMixture, TargetModel, VarianceSchedule};

fn main() -> flowlab::Result<()> {
    let arm = match std::env::args().nth(1).as_deref() {
        Some("trained") => SweepArm::Trained,
        _ => SweepArm::ExactControl,
    };
    let target = TargetModel::from(GaussianMixture::isotropic(
        vec![0.5, 0.5],
        vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
        vec![0.25, 0.25],
    )?);
    let sweep = SweepConfig {
        arm,
        ..SweepConfig::new(vec![250, 1000, 4000], vec![1, 2, 3])
    };
    let mut train = TrainConfig::new(250);
    train.steps = 2000;
    let eval = EvalConfig {
        m: 1000,
        ..EvalConfig::default()
    };
    let schedule = VarianceSchedule::geometric(0.5, 1.0)?;
    let report = rate_sweep(&target, &schedule, &sweep, &train, &IntegratorConfig::rk4(64)?, &eval)?;
    for s in &report.summaries {
        println!("n={:<5} σmin={:.3} median W1={:.4} iqr={:.4}", s.n, s.sigma_min, s.median, s.iqr);
    }
    println!(
        "fitted slope {:?}, reference slope {:.4} (asymptotic, not expected at this scale)",
        report.fitted_slope, report.reference_slope
    );
    println!("non-increasing within IQR: {}", report.non_increasing_within_iqr());
    Ok(())
}
