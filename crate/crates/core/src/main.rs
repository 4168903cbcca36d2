use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metamem::harness::{compare_algorithms, run_experiment, verify_suite};
use metamem::{load_config, FedMode};

#[derive(Parser)]
#[command(name = "metamem", version, about = "Memory-based meta-learning optimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config (a seed sweep when num_seeds > 1).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the federated participation mode.
        #[arg(long, value_parser = ["cross_silo", "cross_device"])]
        fed_mode: Option<String>,
    },
    /// Run several configs sharing a taskset seed and tabulate them.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in oracle and invariant checks.
    Verify,
}

fn run(cli: Cli) -> Result<bool, metamem::Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            fed_mode,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = fed_mode {
                cfg.fed_mode = m.parse::<FedMode>().map_err(metamem::Error::InvalidConfig)?;
            }
            let summary = run_experiment(&cfg, Some(&out))?;
            println!(
                "{} seeds={} eta={} test_error={:.6} ± {:.6} -> {}",
                cfg.algorithm,
                summary.runs.len(),
                summary.cfg.eta,
                summary.test_error_mean,
                summary.test_error_std,
                out.display()
            );
            Ok(true)
        }
        Command::Compare { configs, out } => {
            let entries = configs
                .iter()
                .map(|p| {
                    let name = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    Ok((name, load_config(p)?))
                })
                .collect::<Result<Vec<_>, metamem::Error>>()?;
            let table = compare_algorithms(&entries, Some(&out))?;
            print!("{}", table.csv());
            Ok(true)
        }
        Command::Verify => {
            let checks = verify_suite();
            let mut ok = true;
            for c in &checks {
                println!("[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
