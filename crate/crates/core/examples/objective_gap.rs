//! The marginal and conditional flow-matching objectives differ by a
//! constant that does not depend on the network.

use flowlab::field::MarginalField;
use flowlab::nn::{objective_gap_check, MlpNetwork};
use flowlab::rng::stream;
use flowlab::{GaussianMixture, VarianceSchedule};

fn main() -> flowlab::Result<()> {
    let mix = GaussianMixture::isotropic(vec![0.35, 0.65], vec![vec![-1.5], vec![2.0]], vec![0.2, 0.4])?;
    let schedule = VarianceSchedule::geometric(0.05, 1.0)?;
    println!("{:<14} {:>10} {:>10} {:>10} {:>10}", "field", "FM", "CFM", "CVar", "residual");
    let exact = MarginalField::exact(schedule.clone(), mix.clone());
    let g = objective_gap_check(&exact, &mix, &schedule, 1e-6)?;
    println!("{:<14} {:>10.6} {:>10.6} {:>10.6} {:>10.1e}", "exact", g.fm, g.cfm, g.cvar, g.residual);
    for (k, hidden) in [vec![8], vec![32, 32], vec![32, 32, 32]].into_iter().enumerate() {
        let net = MlpNetwork::random(1, &hidden, 3.0, 50.0, &mut stream(k as u64, "net"))?;
        let g = objective_gap_check(&net, &mix, &schedule, 1e-6)?;
        println!("{:<14} {:>10.6} {:>10.6} {:>10.6} {:>10.1e}", format!("net {hidden:?}"), g.fm, g.cfm, g.cvar, g.residual);
    }
    Ok(())
}
