use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::{Context, Outcome};
use error::CliError;

/// Non-centered mean-field VI for the 1D elliptic inverse-source problem.
#[derive(Debug, Parser)]
#[command(name = "ncpvi", version)]
struct Cli {
    /// Flat key=value config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed override such as `data=3`, `eig=1` or `chain=7`. Repeatable.
    #[arg(long = "seed-override", global = true, value_name = "K=V")]
    seed_override: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize observations on the fine mesh.
    GenerateData,
    /// Run NCP mean-field VI on the coarse mesh.
    RunVi,
    /// Run the pCN-within-Gibbs sampler.
    RunGibbs,
    /// Compare VI against stored Gibbs output.
    Compare,
    /// Run VI on every mesh in `mesh.sizes`.
    MeshStudy,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let mut cfg = commands::load_config(cli.config.as_deref())?;
    for spec in &cli.seed_override {
        cfg.override_seed(spec)?;
    }
    if let Some(out) = cli.output {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    let ctx = Context::new(cfg);
    match cli.command {
        Command::GenerateData => commands::generate_data(&ctx),
        Command::RunVi => commands::run_vi(&ctx),
        Command::RunGibbs => commands::run_gibbs(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::MeshStudy => commands::mesh_study(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Converged) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: VI stopped at max_iter without reaching the tolerance");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
