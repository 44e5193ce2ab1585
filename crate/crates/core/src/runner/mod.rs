//! Config-driven experiment runs and strategy comparisons.

pub mod config;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

pub use config::{parse_config, parse_config_str, DeltaQSetting, EnvironmentConfig, RunConfig};
pub use output::{iterations_csv, RunSummary};

use crate::algorithm::{run, RunResult};
use crate::error::{ConfMdpError, Result};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

/// Process exit code for an error surfaced by `run` or `compare`.
pub fn exit_code(err: &ConfMdpError) -> u8 {
    match err {
        ConfMdpError::Usage(_) => EXIT_USAGE,
        ConfMdpError::Config { .. } | ConfMdpError::Io { .. } => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

/// A finished run and where its files went.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    pub summary: RunSummary,
    pub output_dir: PathBuf,
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| ConfMdpError::io(path, e))
}

/// Runs one configuration without touching the file system.
pub fn execute(config: &RunConfig) -> Result<(RunResult, RunSummary)> {
    let env = config.build_environment().map_err(|e| match e {
        ConfMdpError::Io { .. } | ConfMdpError::Config { .. } => e,
        other => ConfMdpError::config("environment", other.to_string()),
    })?;
    let result = run(&env, &config.strategy_config(), config.target_mode)?;
    let summary = RunSummary {
        environment: env.name.clone(),
        strategy: config.strategy.name().into(),
        target_mode: config.target_mode.name().into(),
        final_j: result.final_j(),
        iterations: result.records.len(),
        updates: result.updates(),
        converged: result.converged,
        truncated: result.truncated,
        omega: result.omega.clone(),
    };
    Ok((result, summary))
}

/// Runs `config` and writes `iterations.csv` and `summary.txt` to its
/// output directory.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    run_experiment_in(config, &config.output_dir)
}

pub fn run_experiment_in(config: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let (result, summary) = execute(config)?;
    fs::create_dir_all(dir).map_err(|e| ConfMdpError::io(dir, e))?;
    write(dir.join("iterations.csv"), &iterations_csv(&result))?;
    write(dir.join("summary.txt"), &summary.render())?;
    Ok(RunOutcome {
        result,
        summary,
        output_dir: dir.to_path_buf(),
    })
}

/// Runs every config (concurrently) on the shared environment and writes
/// `comparison.csv` plus one subdirectory per run under `out`.
pub fn compare_strategies(configs: &[RunConfig], out: &Path) -> Result<Vec<RunSummary>> {
    if configs.len() < 2 {
        return Err(ConfMdpError::Usage(format!(
            "compare needs at least 2 configs, got {}",
            configs.len()
        )));
    }
    let first = &configs[0];
    for (i, c) in configs.iter().enumerate().skip(1) {
        let same = c.environment == first.environment
            && c.gamma == first.gamma
            && c.delta_q == first.delta_q
            && c.seed == first.seed;
        if !same {
            return Err(ConfMdpError::Usage(format!(
                "config {i} describes a different environment than config 0"
            )));
        }
    }
    let dirs: Vec<PathBuf> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            out.join(format!(
                "{i:02}_{}_{}",
                c.strategy.name(),
                c.target_mode.name()
            ))
        })
        .collect();
    let outcomes: Vec<Result<RunOutcome>> = thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .zip(&dirs)
            .map(|(c, d)| scope.spawn(move || run_experiment_in(c, d)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    let mut summaries = Vec::with_capacity(configs.len());
    let mut table =
        String::from("run,strategy,target_mode,final_j,iterations,updates,converged,truncated\n");
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let s = outcome?.summary;
        table.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            s.strategy,
            s.target_mode,
            output::float(s.final_j),
            s.iterations,
            s.updates,
            s.converged,
            s.truncated
        ));
        summaries.push(s);
    }
    write(out.join("comparison.csv"), &table)?;
    Ok(summaries)
}
