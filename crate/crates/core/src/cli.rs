//! Command-line experiment runner.
//!
//! Every subcommand reads an [`ExperimentConfig`], applies flag overrides and
//! writes CSV artifacts into the output directory. Each CSV starts with `#`
//! comment lines recording the subcommand, the SHA-256 of the effective
//! config and the seed. Files are staged as `*.partial` and only renamed once
//! the whole subcommand has succeeded.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{rate_sweep, w1, Estimator, SweepArm};
use crate::field::{MarginalField, VelocityField, ZeroField};
use crate::flow::push_samples;
use crate::lipschitz::{
    chebyshev_grid, covariance_decay_audit, default_tstar, empirical_lipschitz, lipschitz_scan, probe_set,
    pair_step, LipschitzReport, SlopeFit,
};
use crate::nn::{load_checkpoint, train, write_checkpoint, MlpNetwork};
use crate::rng::stream;
use crate::samples::{csv_header, fmt_num as num, Samples};

#[derive(Debug, Parser)]
#[command(name = "flowlab", version, about = "Gaussian-path flow matching experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed, overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldChoice {
    /// Exact (mixture) or importance-sampled (perturbed) marginal field.
    Exact,
    /// `v ≡ 0`: outputs are the latent draws.
    Zero,
}

#[derive(Debug, Clone, Args)]
pub struct FieldArgs {
    #[arg(long, value_enum, default_value = "exact")]
    pub field: FieldChoice,
    /// Use a trained network checkpoint instead of `--field`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Integration steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Integration method: rk4 or euler.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of generated points.
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check ∫|σ'/σ| = log(1/σ_min) for the configured schedule.
    ScheduleAudit(Common),
    /// Evaluate the marginal field at the configured probes.
    FieldProbe(Common),
    /// B-matrix Lipschitz bounds over a t-grid plus the covariance audit.
    LipschitzScan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_points: Option<usize>,
        /// Empirical Lipschitz pairs per t (0 disables).
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Train a network on target samples.
    Train {
        #[command(flatten)]
        common: Common,
        /// Optimisation steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Push latent Gaussian draws through a field.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: FieldArgs,
    },
    /// W1 between generated (or given) samples and fresh target samples.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: FieldArgs,
        /// Read generated samples from a CSV instead of generating them.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// exact-1d, assignment or sliced.
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        n_proj: Option<usize>,
    },
    /// W1 against training-set size with σ_min(n).
    RateSweep {
        #[command(flatten)]
        common: Common,
        /// trained or exact-control.
        #[arg(long)]
        arm: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ScheduleAudit(_) => "schedule-audit",
            Command::FieldProbe(_) => "field-probe",
            Command::LipschitzScan { .. } => "lipschitz-scan",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Evaluate { .. } => "evaluate",
            Command::RateSweep { .. } => "rate-sweep",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::ScheduleAudit(c) | Command::FieldProbe(c) => c,
            Command::LipschitzScan { common, .. }
            | Command::Train { common, .. }
            | Command::Sample { common, .. }
            | Command::Evaluate { common, .. }
            | Command::RateSweep { common, .. } => common,
        }
    }
}

/// Files produced by a subcommand, written all-or-nothing.
struct Outputs {
    dir: PathBuf,
    header: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn csv(&mut self, name: &str, body: String) {
        let mut text = self.header.clone();
        text.push_str(&body);
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn binary(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn commit(self) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)?;
        let mut staged = Vec::new();
        let result = (|| -> Result<()> {
            for (name, bytes) in &self.files {
                let tmp = self.dir.join(format!("{name}.partial"));
                staged.push(tmp.clone());
                std::fs::write(&tmp, bytes)?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for p in &staged {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        let mut finals = Vec::new();
        for (name, _) in &self.files {
            let dst = self.dir.join(name);
            std::fs::rename(self.dir.join(format!("{name}.partial")), &dst)?;
            finals.push(dst);
        }
        Ok(finals)
    }
}

fn apply_field_overrides(cfg: &mut ExperimentConfig, f: &FieldArgs) {
    if let Some(s) = f.steps {
        cfg.integrator.steps = s;
    }
    if let Some(m) = &f.method {
        cfg.integrator.method = m.clone();
    }
    if let Some(m) = f.m {
        cfg.eval.m = m;
    }
}

/// Load the config and apply every flag override, then re-validate.
pub fn effective_config(command: &Command) -> Result<ExperimentConfig> {
    let common = command.common();
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    match command {
        Command::LipschitzScan { t_points, pairs, .. } => {
            if let Some(t) = t_points {
                cfg.diagnostics.t_points = *t;
            }
            if let Some(p) = pairs {
                cfg.diagnostics.pairs = *p;
            }
        }
        Command::Train { steps, batch, lr, .. } => {
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            if let Some(b) = batch {
                cfg.train.batch = *b;
            }
            if let Some(l) = lr {
                cfg.train.lr = *l;
            }
        }
        Command::Sample { field, .. } => apply_field_overrides(&mut cfg, field),
        Command::Evaluate {
            field,
            estimator,
            n_proj,
            ..
        } => {
            apply_field_overrides(&mut cfg, field);
            if let Some(e) = estimator {
                cfg.eval.estimator = Some(e.parse::<Estimator>()?);
            }
            if let Some(n) = n_proj {
                cfg.eval.n_proj = *n;
            }
        }
        Command::RateSweep { arm: Some(a), .. } => {
            let arm = match a.as_str() {
                "trained" => SweepArm::Trained,
                "exact-control" => SweepArm::ExactControl,
                other => {
                    return Err(Error::Config(format!(
                        "unknown arm '{other}' (expected trained or exact-control)"
                    )))
                }
            };
            cfg.sweep
                .as_mut()
                .ok_or_else(|| Error::Config("rate-sweep needs a [sweep] section".into()))?
                .arm = arm;
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run a parsed command; returns the written files.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = effective_config(&cli.command)?;
    let header = format!(
        "# flowlab {}\n# config_sha256: {}\n# seed: {}\n",
        cli.command.name(),
        cfg.hash()?,
        cfg.seed
    );
    let mut out = Outputs {
        dir: cfg.out.clone(),
        header,
        files: Vec::new(),
    };
    match &cli.command {
        Command::ScheduleAudit(_) => schedule_audit(&cfg, &mut out)?,
        Command::FieldProbe(_) => field_probe(&cfg, &mut out)?,
        Command::LipschitzScan { .. } => lipschitz(&cfg, &mut out)?,
        Command::Train { .. } => train_cmd(&cfg, &mut out)?,
        Command::Sample { field, .. } => {
            let generated = generate(&cfg, field)?;
            out.csv("samples.csv", generated.to_csv());
        }
        Command::Evaluate { field, samples, .. } => evaluate(&cfg, field, samples.as_deref(), &mut out)?,
        Command::RateSweep { .. } => sweep_cmd(&cfg, &mut out)?,
    }
    out.commit()
}

fn marginal_field(cfg: &ExperimentConfig) -> Result<MarginalField> {
    MarginalField::new(
        cfg.build_schedule()?,
        cfg.build_target()?,
        cfg.diagnostics.is_samples,
        cfg.seed,
    )
}

fn schedule_audit(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let audit = cfg.build_schedule()?.audit(cfg.diagnostics.quad_tol)?;
    out.csv(
        "schedule_audit.csv",
        format!("{}\n{}\n", crate::schedules::ScheduleAudit::CSV_HEADER, audit.csv_row()),
    );
    Ok(())
}

fn field_probe(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let field = marginal_field(cfg)?;
    let d = field.dim();
    let ts = if cfg.diagnostics.probe_t.is_empty() {
        vec![0.0, 0.5, 0.9, 1.0]
    } else {
        cfg.diagnostics.probe_t.clone()
    };
    let xs = if cfg.diagnostics.probe_x.is_empty() {
        let s = field.target().sample(&mut stream(cfg.seed, "field-probe-points"), 8);
        s.rows().map(<[f64]>::to_vec).collect()
    } else {
        cfg.diagnostics.probe_x.clone()
    };
    let mut body = format!("t,{},{},ess\n", csv_header("x", d), csv_header("v", d));
    for &t in &ts {
        for x in &xs {
            let m = field.moments(t, x)?;
            let v = crate::field::velocity_from_mean(field.schedule(), t, x, &m.mean);
            let cells: Vec<String> = std::iter::once(t)
                .chain(x.iter().copied())
                .chain(v)
                .chain(std::iter::once(m.ess_value()))
                .map(num)
                .collect();
            body.push_str(&cells.join(","));
            body.push('\n');
        }
    }
    out.csv("field_probe.csv", body);
    Ok(())
}

fn lipschitz(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let field = marginal_field(cfg)?;
    let dg = &cfg.diagnostics;
    let probes = probe_set(
        &field,
        dg.grid_probes,
        dg.sample_probes,
        &mut stream(cfg.seed, "lipschitz-probes"),
    );
    let grid = chebyshev_grid(dg.t_points);
    let report: LipschitzReport = lipschitz_scan(&field, &grid, &probes)?;
    let mut body = format!("{}\n", LipschitzReport::CSV_HEADER);
    for row in report.csv_rows() {
        body.push_str(&row);
        body.push('\n');
    }
    for line in report.footer() {
        body.push_str(&format!("# {line}\n"));
    }
    out.csv("lipschitz_scan.csv", body);

    if dg.pairs > 0 {
        let mut rng = stream(cfg.seed, "lipschitz-pairs");
        let mut emp = String::from("t,empirical,se,lower,upper,inside\n");
        for (k, &t) in grid.iter().enumerate() {
            let step = pair_step(field.schedule(), t);
            let e = empirical_lipschitz(&field, t, &probes, dg.pairs, step, &mut rng)?;
            let inside = e.estimate >= report.lower[k] - 3.0 * e.se && e.estimate <= report.upper[k] + 3.0 * e.se;
            emp.push_str(&format!(
                "{},{},{},{},{},{inside}\n",
                num(t),
                num(e.estimate),
                num(e.se),
                num(report.lower[k]),
                num(report.upper[k])
            ));
        }
        out.csv("lipschitz_empirical.csv", emp);
    }

    let tstar = dg.tstar.unwrap_or_else(|| default_tstar(field.schedule()));
    let audit = covariance_decay_audit(&field, &probes, &grid, tstar)?;
    let mut body = String::from("t,scale,max_offdiag,max_var_deviation,max_var_rel_deviation,uniform_max\n");
    for k in 0..audit.t_grid.len() {
        let cells = [
            audit.t_grid[k],
            audit.scale[k],
            audit.max_offdiag[k],
            audit.max_var_deviation[k],
            audit.max_var_rel_deviation[k],
            audit.uniform_max[k],
        ];
        body.push_str(&cells.map(num).join(","));
        body.push('\n');
    }
    let fit = |f: &SlopeFit| match f {
        SlopeFit::Fitted { slope, .. } => num(*slope),
        SlopeFit::Vacuous => "vacuous".into(),
        SlopeFit::Unavailable => "unavailable".into(),
    };
    body.push_str("# tstar,offdiag_slope,variance_slope,uniform_max,uniform_reference\n");
    body.push_str(&format!(
        "# {},{},{},{},{}\n",
        num(audit.tstar),
        fit(&audit.offdiag_slope),
        fit(&audit.variance_slope),
        num(audit.global_uniform_max),
        num(audit.uniform_reference)
    ));
    out.csv("covariance_audit.csv", body);
    Ok(())
}

fn train_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let target = cfg.build_target()?;
    let data = target.sample(&mut stream(cfg.seed, "train-data"), cfg.train.n);
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let outcome = train(&data, &tc, &cfg.build_schedule()?, target.perturbation_bound())?;
    let mut bytes = Vec::new();
    write_checkpoint(&outcome.net, &mut bytes)?;
    out.binary("network.ckpt", bytes);
    let mut body = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        body.push_str(&format!("{i},{}\n", num(*l)));
    }
    out.csv("loss_trace.csv", body);
    Ok(())
}

enum AnyField {
    Marginal(MarginalField),
    Zero(ZeroField),
    Learned(MlpNetwork),
}

impl AnyField {
    fn as_field(&self) -> &dyn VelocityField {
        match self {
            AnyField::Marginal(f) => f,
            AnyField::Zero(f) => f,
            AnyField::Learned(f) => f,
        }
    }
}

fn choose_field(cfg: &ExperimentConfig, args: &FieldArgs) -> Result<AnyField> {
    if let Some(path) = &args.checkpoint {
        let net = load_checkpoint(path)?;
        if net.dim() != cfg.dim() {
            return Err(Error::SizeMismatch(format!(
                "checkpoint has dimension {}, target {}",
                net.dim(),
                cfg.dim()
            )));
        }
        return Ok(AnyField::Learned(net));
    }
    Ok(match args.field {
        FieldChoice::Exact => AnyField::Marginal(marginal_field(cfg)?),
        FieldChoice::Zero => AnyField::Zero(ZeroField(cfg.dim())),
    })
}

fn generate(cfg: &ExperimentConfig, args: &FieldArgs) -> Result<Samples> {
    let field = choose_field(cfg, args)?;
    push_samples(
        field.as_field(),
        &mut stream(cfg.seed, "sample-latent"),
        cfg.eval.m,
        &cfg.build_integrator()?,
    )
}

fn evaluate(cfg: &ExperimentConfig, args: &FieldArgs, samples: Option<&Path>, out: &mut Outputs) -> Result<()> {
    let generated = match samples {
        Some(p) => Samples::from_csv(&std::fs::read_to_string(p)?)?,
        None => generate(cfg, args)?,
    };
    let target = cfg.build_target()?;
    if generated.dim() != target.dim() {
        return Err(Error::SizeMismatch(format!(
            "samples have dimension {}, target {}",
            generated.dim(),
            target.dim()
        )));
    }
    let reference = target.sample(&mut stream(cfg.seed, "evaluate-target"), generated.len());
    let estimator = cfg.eval.estimator_for(target.dim());
    let r = w1(
        &generated,
        &reference,
        estimator,
        cfg.eval.n_proj,
        &mut stream(cfg.seed, "evaluate-projections"),
    )?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    out.csv(
        "evaluate.csv",
        format!(
            "estimator,value,se,m,n_proj,seed\n{},{},{},{},{},{}\n",
            r.estimator,
            num(r.value),
            opt(r.se.map(num)),
            r.m,
            opt(r.n_proj.map(|n| n.to_string())),
            cfg.seed
        ),
    );
    Ok(())
}

fn sweep_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let mut sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("rate-sweep needs a [sweep] section".into()))?;
    sweep.seeds = sweep.seeds.iter().map(|s| cfg.seed.wrapping_add(*s)).collect();
    let target = cfg.build_target()?;
    let report = rate_sweep(
        &target,
        &cfg.build_schedule()?,
        &sweep,
        &cfg.train,
        &cfg.build_integrator()?,
        &cfg.eval,
    )?;
    let mut body = String::from("n,sigma_min,seed,w1,estimator\n");
    for r in &report.rows {
        let (w, est) = match &r.w1 {
            Some(w) => (num(w.value), w.estimator.to_string()),
            None => (String::new(), "failed".to_string()),
        };
        body.push_str(&format!("{},{},{},{w},{est}\n", r.n, num(r.sigma_min), r.seed));
    }
    out.csv("sweep.csv", body);
    let mut body = String::from("n,median,iqr,ref_slope\n");
    for s in &report.summaries {
        body.push_str(&format!(
            "{},{},{},{}\n",
            s.n,
            num(s.median),
            num(s.iqr),
            num(report.reference_slope)
        ));
    }
    body.push_str(&format!(
        "# fitted_slope: {}\n# non_increasing_within_iqr: {}\n",
        report.fitted_slope.map_or("unavailable".into(), num),
        report.non_increasing_within_iqr()
    ));
    out.csv("sweep_summary.csv", body);
    Ok(())
}

/// Parse arguments, run, and map errors to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
