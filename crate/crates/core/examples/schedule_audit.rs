//! Compare variance schedules: boundary values, the log-quotient integral and
//! the late-regime threshold t*.

use flowlab::VarianceSchedule;

fn main() -> flowlab::Result<()> {
    let sigma_min = 1e-3;
    let schedules = [
        VarianceSchedule::geometric(sigma_min, 1.0)?,
        VarianceSchedule::linear(sigma_min, 1.0)?,
        VarianceSchedule::poly(vec![1.0, -(1.0 - sigma_min) / 2.0, -(1.0 - sigma_min) / 2.0], 2.0)?,
    ];
    println!("{:<10} {:>8} {:>12} {:>12} {:>8}", "kind", "gamma", "integral", "log(1/σmin)", "t*");
    for s in &schedules {
        let a = s.audit(1e-10)?;
        let tstar = if a.tstar_by_convention { format!("{:.3}*", a.tstar) } else { format!("{:.4}", a.tstar) };
        println!("{:<10} {:>8} {:>12.9} {:>12.9} {:>8}", a.kind, s.gamma(), a.integral, a.expected, tstar);
    }
    println!("(* the quotient is constant, so t* is reported by convention)");

    println!("\n{:>6} {:>12} {:>12} {:>12}", "t", "σ_t", "σ'_t", "t^γ");
    let s = &schedules[1];
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        println!("{t:>6.2} {:>12.6} {:>12.6} {:>12.6}", s.sigma(t)?, s.sigma_prime(t)?, s.mu_coeffs(t)?.0);
    }

    let g = VarianceSchedule::geometric(1e-6, 1.0)?;
    let worst = (0..=1000)
        .map(|i| g.helper_ratio(i as f64 / 1000.0).map(|(r, _)| r))
        .collect::<flowlab::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!("\ngeometric σmin=1e-6: max t/(t²+σ²) = {worst:.4} ≤ {:.4}", g.helper_ratio(0.0)?.1);
    Ok(())
}
