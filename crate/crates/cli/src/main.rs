use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use renaissance_cli::{cmd_gen, cmd_run, cmd_verify, CliError, RunOptions, SeedRange, EXIT_OK, EXIT_VERIFY_FAILED};

#[derive(Parser)]
#[command(name = "renaissance", version, about = "Self-stabilizing in-band SDN control plane simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario config and emit one CSV row per seed.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Inclusive range, e.g. 1..20.
        #[arg(long, conflicts_with = "seed")]
        seeds: Option<SeedRange>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Append rows here instead of printing them.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Worker threads for seed sweeps (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Check offline that synthesized rules survive every set of at most K link failures.
    Verify {
        topology: PathBuf,
        #[arg(long, default_value_t = 1)]
        kappa: usize,
    },
    /// Write a generated topology: ring n=.., grid rows=.. cols=.., clos-lite spine=.. leaf=..,
    /// random n=.. k=.. seed=.. (all accept controllers=..).
    Gen {
        family: String,
        params: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Cmd::Run { config, seed, seeds, max_steps, csv, trace, jobs } => {
            let out = cmd_run(&config, &RunOptions { seed, seeds, max_steps, csv, trace, jobs })?;
            let failed: Vec<u64> = out.runs.iter().filter(|r| !r.converged).map(|r| r.seed).collect();
            if !failed.is_empty() {
                let note = if out.best_effort { " (best effort, kappa >= edge connectivity)" } else { "" };
                eprintln!("not converged for seed(s) {failed:?}{note}");
            }
            Ok(out.exit_code())
        }
        Cmd::Verify { topology, kappa } => {
            let v = cmd_verify(&topology, kappa)?;
            print!("{}", v.report);
            Ok(if v.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Cmd::Gen { family, params, output } => {
            let g = cmd_gen(&family, &params, &output)?;
            eprintln!("wrote {} ({} nodes, {} links)", output.display(), g.node_count(), g.edges().len());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RENAISSANCE_LOG", "warn")).init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
