use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mild_cli::exit_codes;
use mild_cli::ExperimentConfig;
use mild_core::checks::{run_all, Tier};
use mild_core::train::Method;
use mild_core::Error;

#[derive(Parser)]
#[command(
    name = "mild",
    about = "Two-stage learning-to-defer experiments under expert imbalance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Fast,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mild,
    Tdef,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset, expert panel, and cost tensor from a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for dataset.csv, panel.csv, costs.csv, manifest.txt.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a single router and write it with its training trace.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Load data from a `gen` directory instead of regenerating.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mild")]
        method: MethodArg,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a stored router against a data directory.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        router: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-seed comparison sweep; emits report.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the verification suites.
    Check {
        #[arg(long, value_enum, default_value = "fast")]
        tier: TierArg,
        #[arg(long, default_value = "20260801")]
        seed: u64,
    },
}

fn classify(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::InvalidInput(_) | Error::DimensionMismatch(_) => {
            exit_codes::INVALID_CONFIG
        }
        Error::TrainingDiverged { .. } => exit_codes::TRAINING_DIVERGED,
        _ => exit_codes::FAILURE,
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let config = load_config(&config, seed)?;
            let (dataset, panel, costs) = mild_cli::generate_data(&config, config.seed)?;
            mild_cli::experiment::write_data_dir(
                &out,
                &config,
                config.seed,
                &dataset,
                &panel,
                &costs,
            )?;
            println!(
                "wrote {} samples, {} experts to {}",
                dataset.n_samples(),
                panel.n_experts(),
                out.display()
            );
            Ok(exit_codes::OK)
        }
        Command::Train {
            config,
            out,
            data,
            method,
            seed,
        } => {
            let config = load_config(&config, seed)?;
            let core_method = match method {
                MethodArg::Mild => Method::Mild,
                MethodArg::Tdef => Method::Tdef,
            };
            let loaded = match &data {
                Some(dir) => Some(mild_cli::experiment::read_data_dir(dir)?),
                None => None,
            };
            let (_, _, outcome) =
                mild_cli::experiment::run_training(&config, core_method, config.seed, loaded)?;
            std::fs::create_dir_all(&out)?;
            mild_core::io::write_router(&out.join("router.txt"), &outcome.router)?;
            mild_core::io::write_trace(&out.join("trace.csv"), &outcome.trace)?;
            println!(
                "validation deferral loss {}",
                mild_core::io::format_float(outcome.final_validation.mean_deferral_loss)
            );
            Ok(exit_codes::OK)
        }
        Command::Eval { data, router, out } => {
            let report = mild_cli::experiment::evaluate_dir(&data, &router)?;
            let rendered = mild_core::io::eval_report_to_string(&report);
            print!("{rendered}");
            if let Some(path) = out {
                std::fs::write(path, rendered)?;
            }
            Ok(exit_codes::OK)
        }
        Command::Sweep { config, out, seed } => {
            let config = load_config(&config, seed)?;
            let outcome = mild_cli::run_sweep(&config)?;
            std::fs::create_dir_all(&out)?;
            let report = mild_cli::render_report(&config, &outcome);
            std::fs::write(out.join("report.csv"), &report)?;
            mild_cli::verify_report(&report)?;
            for summary in &outcome.summaries {
                println!(
                    "{}: dl {} +/- {}",
                    summary.method.as_str(),
                    mild_core::io::format_float(summary.mean_deferral_loss),
                    mild_core::io::format_float(summary.std_deferral_loss)
                );
            }
            if outcome.any_divergence {
                eprintln!("training diverged on at least one seed; see report.csv");
                return Ok(exit_codes::TRAINING_DIVERGED);
            }
            Ok(exit_codes::OK)
        }
        Command::Check { tier, seed } => {
            let tier = match tier {
                TierArg::Fast => Tier::Fast,
                TierArg::Full => Tier::Full,
            };
            let reports = run_all(tier, seed);
            let mut failed = false;
            for report in &reports {
                if report.passed() {
                    println!("suite {}: {} cases, pass", report.name, report.cases);
                } else {
                    failed = true;
                    println!(
                        "suite {}: {} cases, FAIL ({} failures)",
                        report.name,
                        report.cases,
                        report.failures.len()
                    );
                    for failure in &report.failures {
                        println!("  - {failure}");
                    }
                }
            }
            Ok(if failed {
                exit_codes::CHECKS_FAILED
            } else {
                exit_codes::OK
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(classify(&err) as u8)
        }
    }
}
