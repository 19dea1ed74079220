use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bmlab::clt::{
    calibrate_tv_floor, limiting_variance, partial_sum, stein_discrepancy, tv_estimate,
    EmpiricalVariance, Reference, TestFunction, DEFAULT_LAG_CUTOFF,
};
use bmlab::gaussproc::{simulate, validate, write_atomic, CorrelationModel};
use bmlab::hermite::{expand, FunctionSpec, QuadratureRule, DEFAULT_MAX_ORDER};
use bmlab::lab::{run, verify, ExperimentConfig, TV_FLOOR_REPEATS};
use bmlab::malliavin::{
    gamma_estimate, key_identity_grid, GammaMode, DEFAULT_HAT_COUNT, DEFAULT_ST_GRID,
    DEFAULT_XI_GRID,
};
use bmlab::{LabError, Result};

#[derive(Parser)]
#[command(name = "bmlab", version, about = "Breuer-Major CLT numerical laboratory")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (file stem or directory, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Experiment config (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Sim {
    /// Correlation model: kronecker, geom:A, poly:ALPHA, table:[...].
    #[arg(long)]
    model: String,
    /// Path length.
    #[arg(short, long)]
    n: usize,
    /// Replications.
    #[arg(short = 'm', long = "replications", default_value_t = 1000)]
    replications: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Hermite expansion of a built-in function as JSON.
    Expand {
        /// hermite:M, abs, poly:[...], coeffs:[...]
        #[arg(long)]
        function: String,
        #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
        max_order: usize,
        /// Recompute the coefficients by Gauss-Hermite quadrature.
        #[arg(long)]
        quadrature: bool,
    },
    /// Circulant-embedding PSD check.
    ValidateModel {
        #[arg(long)]
        model: String,
        #[arg(short, long)]
        n: usize,
    },
    /// Simulate a path batch and write `<out>.bin` + `<out>.json`.
    Simulate {
        #[command(flatten)]
        sim: Sim,
        /// Also draw the independent copy.
        #[arg(long)]
        double: bool,
        /// Zero negative embedding eigenvalues instead of failing.
        #[arg(long)]
        clip: bool,
    },
    /// Limiting variance, optionally with an empirical estimate.
    Variance {
        #[arg(long)]
        function: String,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = DEFAULT_LAG_CUTOFF)]
        lag_cutoff: usize,
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(short = 'm', long = "replications", default_value_t = 2000)]
        replications: usize,
    },
    /// Distance of the normalized partial sum to the standard normal.
    CltCheck {
        #[arg(long)]
        function: String,
        #[command(flatten)]
        sim: Sim,
    },
    /// Key identity residuals and carré du champ estimates.
    SharpCheck {
        #[arg(long)]
        function: String,
        #[command(flatten)]
        sim: Sim,
        #[arg(long, default_value_t = DEFAULT_HAT_COUNT)]
        hat_count: usize,
        /// Frequencies (comma separated).
        #[arg(long, value_delimiter = ',')]
        xi: Vec<f64>,
        /// Write per-replication Gamma estimates as CSV.
        #[arg(long)]
        gamma_csv: Option<PathBuf>,
    },
    /// Run an experiment config.
    Run,
    /// Re-check a stored report without re-simulating.
    Verify {
        /// report.json or the directory containing it.
        report: PathBuf,
    },
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| LabError::Parse(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    let g = cli.global;
    let seed = g.seed.unwrap_or(0);
    if let Some(w) = g.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| LabError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Expand { function, max_order, quadrature } => {
            let spec = FunctionSpec::parse(&function)?;
            let e = spec.expansion(max_order)?;
            let e = if quadrature {
                expand(|x| e.eval(x), max_order, &QuadratureRule::default())?
            } else {
                e
            };
            print_json(&e)?;
            Ok(0)
        }
        Command::ValidateModel { model, n } => {
            let m: CorrelationModel = model.parse()?;
            print_json(&validate(&m, n)?)?;
            Ok(0)
        }
        Command::Simulate { sim, double, clip } => {
            let m: CorrelationModel = sim.model.parse()?;
            let opts = bmlab::gaussproc::SimulationOptions { clip, ..Default::default() };
            let batch = simulate(&m, sim.n, sim.replications, seed, double, opts)?;
            if let Some(stem) = &g.out {
                batch.save(stem)?;
            }
            print_json(&batch.sidecar())?;
            Ok(0)
        }
        Command::Variance { function, model, lag_cutoff, n, replications } => {
            let f = FunctionSpec::parse(&function)?.expansion(DEFAULT_MAX_ORDER)?;
            let m: CorrelationModel = model.parse()?;
            let mut report = limiting_variance(&f, &m, lag_cutoff)?;
            if let Some(n) = n {
                let batch = simulate(&m, n, replications, seed, false, Default::default())?;
                report.empirical.push(EmpiricalVariance::from_sample(&partial_sum(&f, &batch)?));
            }
            print_json(&report)?;
            Ok(0)
        }
        Command::CltCheck { function, sim } => {
            let f = FunctionSpec::parse(&function)?.expansion(DEFAULT_MAX_ORDER)?;
            let m: CorrelationModel = sim.model.parse()?;
            let batch = simulate(&m, sim.n, sim.replications, seed, false, Default::default())?;
            let z = partial_sum(&f, &batch)?.normalize()?;
            let dist = tv_estimate(&z.values, Reference::StandardNormal)?;
            let floor = calibrate_tv_floor(sim.replications, seed ^ 0x5EED_F100, TV_FLOOR_REPEATS)?;
            let stein = stein_discrepancy(&z, 1.0, &TestFunction::default_family());
            let pass = dist.tv <= 2.0 * floor.value;
            print_json(&serde_json::json!({
                "n": sim.n, "M": sim.replications, "distance": dist,
                "tv_floor": floor, "stein": stein, "pass": pass,
            }))?;
            Ok(if pass { 0 } else { 1 })
        }
        Command::SharpCheck { function, sim, hat_count, xi, gamma_csv } => {
            let f = FunctionSpec::parse(&function)?.expansion(DEFAULT_MAX_ORDER)?;
            let m: CorrelationModel = sim.model.parse()?;
            let batch = simulate(&m, sim.n, sim.replications, seed, false, Default::default())?;
            let xi = if xi.is_empty() { DEFAULT_XI_GRID.to_vec() } else { xi };
            let reports = key_identity_grid(&f, &DEFAULT_ST_GRID, &xi, &batch, hat_count)?;
            if let Some(path) = gamma_csv {
                let g = gamma_estimate(&f, &batch, hat_count, GammaMode::ExactQuadratic)?;
                write_atomic(&path, g.to_csv().as_bytes())?;
            }
            let pass = reports.iter().all(|r| r.passed());
            print_json(&reports)?;
            Ok(if pass { 0 } else { 1 })
        }
        Command::Run => {
            let path = g
                .config
                .ok_or_else(|| LabError::Config("run needs --config".into()))?;
            let mut cfg = ExperimentConfig::load(&path)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if g.out.is_some() {
                cfg.out = g.out;
            }
            if g.workers.is_some() {
                cfg.workers = g.workers;
            }
            let report = run(&cfg)?;
            print!("{}", bmlab::lab::report_csv(&report.rows));
            for row in &report.rows {
                for e in &row.errors {
                    eprintln!("n={} error: {e}", row.n);
                }
            }
            Ok(report.exit_code())
        }
        Command::Verify { report } => {
            let outcome = verify(&report)?;
            for f in &outcome.failures {
                eprintln!("FAIL {f}");
            }
            println!("{}", if outcome.passed { "pass" } else { "fail" });
            Ok(if outcome.passed { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
