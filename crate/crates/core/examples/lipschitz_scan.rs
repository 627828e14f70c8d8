//! Spatial Lipschitz bounds of an exact field over time, their integral, the
//! Grönwall factor, and an empirical check from difference quotients.

use flowlab::lipschitz::{
    b_matrix, chebyshev_grid, empirical_lipschitz, lipschitz_scan, pair_step, probe_set, LipschitzReport,
};
use flowlab::rng::stream;
use flowlab::{GaussianMixture, MarginalField, VarianceSchedule};

fn main() -> flowlab::Result<()> {
    let schedule = VarianceSchedule::geometric(0.01, 1.0)?;
    let mix = GaussianMixture::isotropic(vec![0.3, 0.7], vec![vec![-1.5, 1.0], vec![1.5, -0.5]], vec![0.3, 0.2])?;
    let field = MarginalField::exact(schedule.clone(), mix);
    let probes = probe_set(&field, 256, 100, &mut stream(1, "probes"));
    let grid = chebyshev_grid(32);

    let report = lipschitz_scan(&field, &grid, &probes)?;
    println!("{}", LipschitzReport::CSV_HEADER);
    for row in report.csv_rows().iter().step_by(4) {
        println!("{row}");
    }
    for line in report.footer() {
        println!("{line}");
    }

    println!("\nempirical Lipschitz vs [B_max, d·B_max]:");
    let mut rng = stream(1, "pairs");
    for &t in &[0.2, 0.8, 0.99] {
        let b = b_matrix(&field, t, &probes)?;
        let e = empirical_lipschitz(&field, t, &probes, 2000, pair_step(&schedule, t), &mut rng)?;
        println!(
            "  t={t:<5} {:.4} in [{:.4}, {:.4}]",
            e.estimate,
            b.max_entry(),
            2.0 * b.max_entry()
        );
    }
    Ok(())
}
