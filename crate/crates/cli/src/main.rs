use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cif_fusion::io::{read_dataset_path, write_estimates, write_influence, RunConfig};
use cif_fusion::oracles::{run_negative_controls, run_suite, OracleReport};
use cif_fusion::simulation::{run_study, DgpConfig};
use cif_fusion::{estimate_many, fit_nuisances, FitOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
/// Largest tolerated fraction of failed replicates in `simulate`.
const MAX_EXCLUDED: f64 = 0.05;

#[derive(Parser)]
#[command(name = "cif-fusion", version, about = "Data-fusion estimation of cumulative incidences with external controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate cumulative incidences and times lost from a dataset.
    Estimate {
        /// Dataset CSV with header `id,time,event,treat,pop,x1,...,xp`.
        #[arg(long)]
        data: PathBuf,
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for `estimates.csv` and `influence.csv`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write per-record influence values.
        #[arg(long)]
        emit_influence: bool,
    },
    /// Run the Monte Carlo study described by the configuration's `dgp` block.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Summary CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification oracles.
    Check {
        #[arg(value_enum, default_value_t = Level::Quick)]
        level: Level,
        /// Also run corrupted-input checks, which are expected to fail.
        #[arg(long)]
        negative_controls: bool,
        /// Configuration whose `dgp` block replaces the default process.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Quick,
    Full,
}

fn init_threads() -> Result<()> {
    let threads = match std::env::var("CIF_FUSION_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("CIF_FUSION_THREADS must be a count, got `{v}`"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        weight_cap: cfg.weight_cap_rule,
    }
}

fn cmd_estimate(data: &Path, config: &Path, out: &Path, emit_influence: bool) -> Result<()> {
    let cfg = RunConfig::from_path(config)
        .with_context(|| format!("reading config {}", config.display()))?;
    let tau = cfg.horizon()?;
    let ingested = read_dataset_path(data, tau, cfg.jitter_scale, cfg.seed)
        .with_context(|| format!("reading dataset {}", data.display()))?;
    let cohort = ingested.cohort;
    log::info!(
        "{} records ({} trial, {} external), {} dropped, {} jittered",
        cohort.len(),
        cohort.n_trial(),
        cohort.n_external(),
        ingested.dropped_missing,
        ingested.jittered
    );
    let ns = fit_nuisances(&cohort, &options(&cfg)).context("fitting nuisance models")?;
    let reports = estimate_many(&cohort, &ns, &cfg.expanded_targets()).context("estimating")?;
    fs::create_dir_all(out)?;
    let path = out.join("estimates.csv");
    write_estimates(&reports, fs::File::create(&path)?)
        .with_context(|| format!("writing {}", path.display()))?;
    if emit_influence {
        let path = out.join("influence.csv");
        write_influence(&cohort, &reports, fs::File::create(&path)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Returns false when too many replicates were excluded.
fn cmd_simulate(config: &Path, out: Option<&Path>) -> Result<bool> {
    let cfg = RunConfig::from_path(config)
        .with_context(|| format!("reading config {}", config.display()))?;
    let dgp = cfg.simulation_config()?;
    let study = run_study(&dgp, &options(&cfg), cfg.reps, &cfg.expanded_targets())?;
    let text = study.summary.to_csv()?;
    match out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    let fraction = study.summary.excluded_fraction();
    log::info!(
        "{} replicates used, {} excluded",
        study.summary.replicates,
        study.summary.excluded
    );
    if fraction > MAX_EXCLUDED {
        eprintln!(
            "error: {:.1}% of replicates excluded (limit {:.0}%)",
            100.0 * fraction,
            100.0 * MAX_EXCLUDED
        );
        return Ok(false);
    }
    Ok(true)
}

fn print_reports(reports: &[OracleReport], expect_fail: bool) {
    for r in reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        let note = if expect_fail { " (expected FAIL)" } else { "" };
        println!(
            "{verdict}  {:<42} statistic {:.3e}  threshold {:.3e}  {}{note}",
            r.name, r.statistic, r.threshold, r.detail
        );
    }
}

fn cmd_check(level: Level, negative: bool, config: Option<&Path>, seed: u64) -> Result<bool> {
    let dgp = match config {
        Some(p) => RunConfig::from_path(p)?.simulation_config()?,
        None => DgpConfig::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = run_suite(&dgp, matches!(level, Level::Full), &mut rng)?;
    print_reports(&reports, false);
    let mut ok = reports.iter().all(|r| r.passed);
    if negative {
        let controls = run_negative_controls(&dgp)?;
        print_reports(&controls, true);
        ok &= controls.iter().all(|r| !r.passed);
    }
    Ok(ok)
}

/// Maps the first library error in the chain to the exit-code contract.
fn exit_code(err: &anyhow::Error) -> u8 {
    use cif_fusion::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                _ if e.is_numerical() => EXIT_NUMERICAL,
                Error::Config(_) | Error::Json(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Estimate {
            data,
            config,
            out,
            emit_influence,
        } => cmd_estimate(&data, &config, &out, emit_influence).map(|()| true),
        Command::Simulate { config, out } => cmd_simulate(&config, out.as_deref()),
        Command::Check {
            level,
            negative_controls,
            config,
            seed,
        } => cmd_check(level, negative_controls, config.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        // failed checks and excessive replicate exclusion
        Ok(false) => ExitCode::from(EXIT_NUMERICAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
