use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slowfast_core::averaging::{estimate_averaged_drift, write_drift_cache, CachedDrift, ESTIMATOR_LANE};
use slowfast_core::config::{parse_config, RunConfig, CONFIG_KEYS};
use slowfast_core::harness::{convergence_experiment, emit_report, verify_lemmas, verify_table_csv, ReportFormat};
use slowfast_core::integrator::simulate_coupled;
use slowfast_core::noise::Channel;
use slowfast_core::{Error, FieldVector, RandomStream, ReplicaStreams};

const SEED_ENV: &str = "SLOWFAST_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "slowfast",
    version,
    about = "Simulate slow-fast stochastic reaction-diffusion systems and check the averaging principle",
    after_help = help_footer()
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for replica parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Master seed; overrides SLOWFAST_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated checks for `verify` (default: all).
    #[arg(long, global = true, value_delimiter = ',')]
    select: Vec<String>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Coupled trajectories, one CSV per ε.
    Simulate,
    /// Averaged-drift estimate at `averaging.x`.
    Average,
    /// Convergence study over the ε grid (CSV and SVG).
    Converge,
    /// Statistical verification suite.
    Verify,
}

fn help_footer() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (unknown keys are rejected):\n");
    for (k, c) in CONFIG_KEYS {
        s.push_str(&format!("  {k:width$}  {c}\n"));
    }
    s.push_str(&format!(
        "\nSeed precedence: --seed, then {SEED_ENV}, then `seed` in the config, then 0.\n\
         Exit codes: 0 success, 1 config or I/O error, 2 numerical failure beyond the exclusion budget, \
         3 verification failure."
    ));
    s
}

enum Failure {
    Usage(String),
    Run(Error),
    Verify(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } | Error::FailureBudget { .. } => 2,
        Error::Config { .. } | Error::Io { .. } | Error::Contract(_) => 1,
    }
}

fn resolve_seed(cli: Option<u64>, config: u64) -> Result<u64, Failure> {
    if let Some(s) = cli {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))),
        Err(_) => Ok(config),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let configs = cfg.sim_configs()?;
    ensure_dir(out)?;
    for (i, sc) in configs.iter().enumerate() {
        let rec = simulate_coupled(&cfg.system, sc, &mut ReplicaStreams::for_epsilon(cfg.seed, 0, i))?;
        let path = out.join(format!("trajectory_eps{}.csv", sc.epsilon));
        rec.write_csv(&path, true)?;
        let d = rec.diagnostics.entries().map(|(k, v)| format!("{k}={v}")).join(" ");
        eprintln!(
            "ε = {}: sup‖u‖ = {:.6}, {d} -> {}",
            sc.epsilon,
            rec.sup_norm_u,
            path.display()
        );
    }
    Ok(())
}

fn average(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let mut w = RandomStream::new(cfg.seed, 0, ESTIMATOR_LANE, Channel::W2);
    let mut n = RandomStream::new(cfg.seed, 0, ESTIMATOR_LANE, Channel::N2);
    let y0 = FieldVector::zeros(cfg.system.n_modes());
    let est = estimate_averaged_drift(
        &cfg.system,
        &cfg.average_x,
        cfg.average_t0,
        &cfg.averaging,
        &y0,
        &mut w,
        &mut n,
    )?;
    ensure_dir(out)?;
    let path = out.join("averaged_drift.csv");
    write_drift_cache(&path, &[CachedDrift::from(&est)], cfg.system.n_modes())?;
    eprintln!(
        "B̄₁ at x: mode 1 = {:.6} (stderr {:.2e}), t_avg = {}, t_burn = {} -> {}",
        est.value.coeffs()[0],
        est.mode_stderr[0],
        est.t_avg,
        est.t_burn,
        path.display()
    );
    Ok(())
}

fn converge(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let report = convergence_experiment(&cfg.system, &cfg.convergence_setup())?;
    ensure_dir(out)?;
    emit_report(&report, ReportFormat::Csv, &out.join("convergence.csv"))?;
    emit_report(&report, ReportFormat::SvgPlot, &out.join("convergence.svg"))?;
    eprintln!(
        "replicas attempted {}, used {}, failed {}",
        report.replicas_attempted, report.n_replicas, report.replicas_failed
    );
    print!("{}", report.to_csv());
    Ok(())
}

fn verify(cfg: &RunConfig, select: &[String], out: &Path) -> Result<(), Failure> {
    let names: Vec<&str> = select.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    let results = verify_lemmas(&cfg.system, &names, &cfg.verify_options())?;
    ensure_dir(out)?;
    let table = verify_table_csv(&results);
    let path = out.join("verify.csv");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    for r in &results {
        println!(
            "{:<28} {:>14.6e} {} {:<12} {}",
            r.name,
            r.statistic,
            r.comparison.symbol(),
            r.threshold,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Verify(failed));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage("--config <PATH> is required".into()))?;
    let mut cfg = parse_config(path)?;
    cfg.seed = resolve_seed(cli.seed, cfg.seed)?;
    let out = cli.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot build thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate => simulate(&cfg, &out),
        Command::Average => average(&cfg, &out),
        Command::Converge => converge(&cfg, &out),
        Command::Verify => verify(&cfg, &cli.select, &out),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verify(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(3)
        }
    }
}
