//! Command-line driver: strategy printing, single simulations, parameter
//! sweeps and the oracle verification suite.
//!
//! Exit codes: 0 success, 2 config error, 3 inadmissible parameters,
//! 4 verification failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use corrport::error::Error;
use corrport::harness::{self, ExperimentConfig, OutputFormat};
use corrport::montecarlo;
use corrport::oracle;
use corrport::strategies::{self, StrategyKind};

#[derive(Parser)]
#[command(
    name = "corrport",
    version,
    about = "Correlation-constrained multi-period portfolio strategies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the strategy vectors for a configuration.
    Strategy {
        #[arg(long)]
        config: PathBuf,
        /// Optional JSON output path for the vectors.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one Monte Carlo estimate for the first configured strategy.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        nsim: Option<usize>,
        /// Optional JSON output path for the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured sweep and emit plot-ready rows.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        nsim: Option<usize>,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's output format.
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
    /// Run the oracle verification suite.
    Verify {
        /// Optional config; the built-in reference parameters are used
        /// otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Path count for the Monte Carlo checks (default 200000).
        #[arg(long)]
        nsim: Option<usize>,
        /// Optional JSON output path for the machine-readable report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::InadmissibleDelta { .. }
        | Error::InvalidParameter { .. }
        | Error::AllValuesInadmissible
        | Error::DegenerateLead => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Strategy { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let grid = cfg.grid.build()?;
            let mut emitted = serde_json::Map::new();
            for &kind in &cfg.strategies {
                let strategy = match kind {
                    StrategyKind::UnSgp => strategies::unconstrained(&cfg.market, &grid)?,
                    StrategyKind::Csgp => strategies::csgp(&cfg.market, &grid)?,
                    StrategyKind::Cpc => strategies::cpc(&cfg.market, &grid)?,
                    StrategyKind::Custom => {
                        return Err(Error::Config("custom strategies have no generator".into()))
                    }
                };
                let rho = strategies::unconditional_correlation(&cfg.market, &grid, &strategy)?;
                println!(
                    "{kind}: {:?}  (corr with index at time 0: {rho:.6})",
                    strategy.amounts()
                );
                emitted.insert(kind.to_string(), serde_json::json!(strategy.amounts()));
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&emitted)? + "\n")?;
            }
            Ok(0)
        }
        Command::Simulate { config, seed, nsim, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let grid = cfg.grid.build()?;
            let mut sim = cfg.simulation;
            if let Some(s) = seed {
                sim.seed = s;
            }
            if let Some(n) = nsim {
                sim.n_sim = n;
            }
            let kind = cfg.strategies[0];
            let strategy = match kind {
                StrategyKind::UnSgp => strategies::unconstrained(&cfg.market, &grid)?,
                StrategyKind::Csgp => strategies::csgp(&cfg.market, &grid)?,
                StrategyKind::Cpc => strategies::cpc(&cfg.market, &grid)?,
                StrategyKind::Custom => {
                    return Err(Error::Config("custom strategies have no generator".into()))
                }
            };
            let report = montecarlo::run(&cfg.market, &grid, &strategy, &sim)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text + "\n")?;
            }
            Ok(0)
        }
        Command::Sweep { config, seed, nsim, out, format } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            if let Some(n) = nsim {
                cfg.simulation.n_sim = n;
            }
            if let Some(f) = format {
                cfg.format = f;
            }
            let rows = harness::run_config(&cfg)?;
            let path = out.unwrap_or_else(|| cfg.output.clone());
            harness::emit(&rows, cfg.format, &path)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
            Ok(0)
        }
        Command::Verify { config, seed, nsim, out } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => harness::reference_config(),
            };
            let grid = cfg.grid.build()?;
            let n_sim = nsim.unwrap_or(200_000);
            let seed = seed.unwrap_or(cfg.simulation.seed);
            let report = oracle::verification_report(&cfg.market, &grid, n_sim, seed);
            let mut failures = 0usize;
            for item in &report {
                let tag = if item.passed { "PASS" } else { "FAIL" };
                println!("[{tag}] {}: {}", item.name, item.detail);
                if !item.passed {
                    failures += 1;
                }
            }
            println!(
                "{} checks, {} failed",
                report.len(),
                failures
            );
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            Ok(if failures > 0 { 4 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
