//! Command-line front end: simulation, estimation, evaluation, Monte-Carlo
//! sweeps and case statistics over CSV and JSON files.

pub mod args;
pub mod commands;
pub mod error;
pub mod experiment;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};

use args::MonteCarloArgs;
use experiment::{resolve_threads, run_and_write, ExperimentConfig};

fn experiment_config(args: &MonteCarloArgs) -> CliResult<ExperimentConfig> {
    let (solver, file_seed) = commands::solver_config(&args.solver)?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::File { path: path.clone(), source })?;
        return Ok(serde_json::from_str(&text)?);
    }
    let seed = args.seed.or(file_seed).unwrap_or(0);
    let (case, grid) = match commands::GridSource::from_args(&args.grid, seed) {
        commands::GridSource::Case(c) => (Some(c), None),
        commands::GridSource::Random(g) => (None, Some(g)),
    };
    Ok(ExperimentConfig {
        case,
        grid,
        model: args.model,
        variants: args.variants.clone(),
        snr_db: args.snr_db.clone(),
        trials: args.trials as usize,
        n_samples: args.samples as usize,
        solver,
        seed,
    })
}

pub fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Estimate(a) => commands::cmd_estimate(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::CaseStats(a) => commands::cmd_case_stats(a),
        Command::Oracle(a) => commands::cmd_oracle(a),
        Command::Montecarlo(a) => {
            let cfg = experiment_config(a)?;
            let threads = resolve_threads(a.threads)?;
            let report = run_and_write(&cfg, threads, &a.out, a.svg)?;
            let failures = report.records.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} rows written to {} ({failures} failed)", report.records.len(), a.out.display());
            Ok(())
        }
    }
}
