use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use xcloud_fl::harness::{self, ExperimentConfig, MetricsRow, SweepReport};
use xcloud_fl::paillier;

#[derive(Debug, Parser)]
#[command(name = "xcloud-fl", version, about = "Cross-cloud federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment cell per strategy and seed, ignoring any sweep grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Echo the effective configuration before running.
        #[arg(long)]
        print_config: bool,
    },
    /// Run the full sweep grid described by the config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        print_config: bool,
    },
    /// Generate a Paillier keypair and write it as TOML.
    Keygen {
        #[arg(long, default_value_t = 2048)]
        bits: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration, with defaults filled in.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    harness::parse_config(path).with_context(|| format!("loading {}", path.display()))
}

fn print_rows(report: &SweepReport) {
    println!(
        "{:<8} {:>10} {:>6} {:>8} {:>9} {:>9} {:>10} {:>12}  status",
        "strategy", "value", "seed", "rounds", "accuracy", "privacy", "wall_ms", "comm_bytes"
    );
    for r in report.rows() {
        print_row(r);
    }
}

fn print_row(r: &MetricsRow) {
    let value = if r.sweep_param_value.is_nan() { "-".to_string() } else { r.sweep_param_value.to_string() };
    let rounds = if r.rounds_to_target < 0 { "-".to_string() } else { r.rounds_to_target.to_string() };
    println!(
        "{:<8} {:>10} {:>6} {:>8} {:>9.4} {:>9.4} {:>10.1} {:>12}  {}",
        r.strategy.to_string(),
        value,
        r.seed,
        rounds,
        r.final_accuracy,
        r.privacy_score,
        r.wall_millis_total,
        r.comm_bytes_total,
        r.status
    );
}

fn execute(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let report = harness::run_sweep(cfg);
    harness::write_outputs(cfg, &report)
        .with_context(|| format!("writing {}", cfg.experiment.output.display()))?;
    print_rows(&report);
    eprintln!("metrics written to {}", cfg.experiment.output.display());
    Ok(report)
}

fn run(path: &Path, print_config: bool) -> Result<bool> {
    let cfg = harness::as_single(&load(path)?);
    if print_config {
        print!("{}", cfg.to_toml_string());
    }
    let report = execute(&cfg)?;
    if let Some(m) = &cfg.migration {
        let (strategy, seed) = (cfg.experiment.strategies[0], cfg.experiment.seeds[0]);
        let outcome = harness::run_migration(&cfg, strategy, f64::NAN, seed)
            .with_context(|| format!("migrating to {}", m.target_cloud))?;
        println!(
            "migration to {} ({strategy}, seed {seed}): accuracy {:.4} -> {:.4}",
            m.target_cloud, outcome.accuracy_before, outcome.accuracy_after
        );
    }
    Ok(report.all_ok())
}

fn sweep(path: &Path, print_config: bool) -> Result<bool> {
    let cfg = load(path)?;
    if print_config {
        print!("{}", cfg.to_toml_string());
    }
    Ok(execute(&cfg)?.all_ok())
}

fn keygen(bits: u32, seed: u64, out: &Path) -> Result<()> {
    let kp = paillier::keygen(bits, seed)?;
    let text = format!(
        "bits = {bits}\nseed = {seed}\nn = \"{:x}\"\nlambda = \"{:x}\"\nmu = \"{:x}\"\n",
        kp.public.n(),
        kp.private.lambda(),
        kp.private.mu()
    );
    harness::write_atomic(out, text.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {bits}-bit keypair to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, print_config } => run(&config, print_config),
        Command::Sweep { config, print_config } => sweep(&config, print_config),
        Command::Keygen { bits, seed, out } => keygen(bits, seed, &out).map(|()| true),
        Command::PrintConfig { config } => {
            let cfg = match config {
                Some(path) => load(&path),
                None => ExperimentConfig::from_toml_str("").map_err(Into::into),
            };
            cfg.map(|c| {
                print!("{}", c.to_toml_string());
                true
            })
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more cells failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[test]
fn verify_cli() {
    use clap::CommandFactory;
    Cli::command().debug_assert()
}
