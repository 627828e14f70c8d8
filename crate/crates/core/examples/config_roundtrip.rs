//! Build every experiment object from a TOML config and print its hash.

use flowlab::config::ExperimentConfig;

const CONFIG: &str = r#"
seed = 42

[target]
type = "perturbed"
dim = 2
perturbation = "cos-sum"
amplitude = 0.2

[schedule]
kind = "linear"
sigma_min = 0.02
gamma = 1.5

[train]
n = 4000
hidden = [64, 64]
"#;

fn main() -> flowlab::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    println!("config sha256: {}", cfg.hash()?);
    let target = cfg.build_target()?;
    let schedule = cfg.build_schedule()?;
    println!("dim {}, perturbation bound {}", cfg.dim(), target.perturbation_bound());
    println!("schedule {} with σmin {} and γ {}", schedule.kind().name(), schedule.sigma_min(), schedule.gamma());
    println!("integrator {:?}", cfg.build_integrator()?);
    println!("\ncanonical form:\n{}", cfg.to_toml_string()?);

    let bad = CONFIG.replace("sigma_min = 0.02", "sigma_min = 2.0");
    if let Err(e) = ExperimentConfig::from_toml_str(&bad) {
        println!("rejected: {e}");
    }
    Ok(())
}
