use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use koopman_sysid::experiments::{self, ExperimentConfig};
use koopman_sysid::io;

/// Exit status for runs that completed but flagged a point as invalid.
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "ksysid", version, about = "Koopman / Perron-Frobenius system identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Never changes results.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate sample pairs and write samples.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of pairs (default: largest T in the grid).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Estimate the Koopman matrix from a samples CSV.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Samples CSV (default: <output_dir>/samples.csv).
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Error-versus-T sweep averaged over realizations.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Bound calibration against empirical violation rates.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Perron-Frobenius pipeline with duality and transfer checks.
    Pf {
        #[command(flatten)]
        common: Common,
    },
    /// Closure diagnostics of the dictionary.
    Closure {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> koopman_sysid::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| koopman_sysid::Error::io(&cfg.output_dir, e))?;
    let dir = cfg.output_dir.clone();
    Ok((cfg, dir))
}

/// Returns whether the run flagged anything invalid.
fn run(command: Command) -> koopman_sysid::Result<bool> {
    match command {
        Command::Simulate { common, steps } => {
            let (mut cfg, dir) = load(&common)?;
            if steps.is_some() {
                cfg.simulate.steps = steps;
            }
            let samples = experiments::run_simulate(&cfg)?;
            let path = dir.join("samples.csv");
            io::write_samples(&path, &samples, &cfg.label)?;
            println!("wrote {} pairs to {}", samples.len(), path.display());
            Ok(false)
        }
        Command::Estimate { common, samples } => {
            let (cfg, dir) = load(&common)?;
            let path = samples.unwrap_or_else(|| dir.join("samples.csv"));
            let (set, _) = io::read_samples(&path)?;
            let (k, report) = experiments::run_estimate(&cfg, &set)?;
            experiments::write_estimate(&k, &report, &dir)?;
            println!(
                "estimated {}x{} Koopman matrix from {} pairs; cond(Sigma0) = {:e}, delta_hat = {:e}",
                k.matrix.nrows(),
                k.matrix.ncols(),
                k.sample_count,
                report.condition_sigma0,
                report.delta_hat
            );
            if k.fallback {
                eprintln!("warning: Sigma0 was ill-conditioned; pseudo-solution used");
            }
            Ok(k.fallback)
        }
        Command::Sweep { common } => {
            let (cfg, dir) = load(&common)?;
            let out = experiments::run_sweep(&cfg)?;
            experiments::write_sweep(&cfg, &out, &dir)?;
            let c = &out.curve;
            for i in 0..c.t_values.len() {
                println!(
                    "T = {:>9}  mean_rel_err = {:.6e}  std_err = {:.3e}  ok = {}  failed = {}{}",
                    c.t_values[i],
                    c.mean_rel_err[i],
                    c.std_err[i],
                    c.n_ok[i],
                    c.n_failed[i],
                    if c.invalid[i] { "  INVALID" } else { "" }
                );
            }
            match (c.fitted_slope, c.slope_stderr) {
                (Some(s), Some(se)) => println!("fitted slope = {s:.4} +/- {se:.4}"),
                _ => println!("fitted slope skipped"),
            }
            Ok(c.any_invalid())
        }
        Command::Bounds { common } => {
            let (cfg, dir) = load(&common)?;
            let rows = experiments::run_bound_calibration(&cfg)?;
            experiments::write_bounds(&cfg, &rows, &dir)?;
            for row in &rows {
                let r = &row.report;
                println!(
                    "T = {:>9}  eps = {:<5}  bound = {:.4e}  pf_bound = {:.4e}  violation_rate = {:.4}{}",
                    r.sample_count,
                    r.epsilon,
                    r.koopman_bound,
                    r.pf_bound,
                    row.stats.violation_rate,
                    if row.invalid { "  INVALID" } else { "" }
                );
            }
            Ok(rows.iter().any(|r| r.invalid))
        }
        Command::Pf { common } => {
            let (cfg, dir) = load(&common)?;
            let out = experiments::run_pf_pipeline(&cfg)?;
            experiments::write_pf(&cfg, &out, &dir)?;
            let r = &out.report;
            println!(
                "T = {}  cond(Lambda) = {:.4e}  duality defect = {:.3e}  failed = {}",
                r.sample_count, r.cond_lambda, r.duality_defect, r.n_failed
            );
            if let Some(n) = r.n_transfer_holds {
                println!("transfer inequality held in {n}/{} realizations", r.n_realizations);
            }
            Ok(r.invalid)
        }
        Command::Closure { common } => {
            let (cfg, dir) = load(&common)?;
            let report = experiments::run_closure(&cfg)?;
            experiments::write_closure(&cfg, &report, &dir)?;
            for ((name, d), f) in report.names.iter().zip(&report.defect).zip(&report.noise_floor) {
                println!("{name:>10}  defect = {d:.4e}  noise floor = {f:.4e}");
            }
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("one or more points were flagged invalid");
            ExitCode::from(EXIT_INVALID)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
