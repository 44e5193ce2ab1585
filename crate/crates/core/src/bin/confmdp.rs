use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use confmdp::diagnostics::verify_suite;
use confmdp::runner::{
    compare_strategies, exit_code, parse_config, run_experiment_in, EXIT_USAGE, EXIT_VERIFY,
};
use confmdp::ConfMdpError;

/// Safe policy-model iteration on tabular configurable MDPs.
#[derive(Parser)]
#[command(name = "confmdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration; writes iterations.csv and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configurations on the same environment side by side.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the numerical identities against independent oracles.
    Verify,
}

fn fail(err: ConfMdpError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(&err))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            match run_experiment_in(&cfg, &dir) {
                Ok(outcome) => {
                    print!("{}", outcome.summary.render());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Compare { configs, out } => {
            let parsed: Result<Vec<_>, _> = configs.iter().map(|p| parse_config(p)).collect();
            let parsed = match parsed {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            match compare_strategies(&parsed, &out) {
                Ok(summaries) => {
                    for s in summaries {
                        println!(
                            "{:<14} {:<10} final_j {:.10} iterations {}",
                            s.strategy, s.target_mode, s.final_j, s.iterations
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Verify => {
            let results = verify_suite();
            let mut ok = true;
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                ok &= r.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
    }
}
