use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use outage_cli::commands::{cmd_generate, cmd_sweep, cmd_train, SweepAxis};
use outage_cli::config::ExperimentConfig;
use outage_cli::verify::{run_all, Effort};
use outage_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "outage", version, about = "Outage-aware greedy resource allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate channels and write the labeled dataset.
    Generate(Common),
    /// Train every configured loss kind on the dataset.
    Train(Common),
    /// Evaluate trained predictors over a grid and write a results CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid to sweep: q_th, gamma or l.
        #[arg(long, default_value = "q_th")]
        axis: SweepAxis,
    },
    /// Run the statistical and numerical self-checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Smaller sample sizes with wider tolerances.
        #[arg(long)]
        quick: bool,
    },
}

fn load(common: &Common) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = load(&common)?;
            let s = cmd_generate(&cfg, &out)?;
            println!("wrote {} records to {} (label rate {:.4})", s.records, s.path.display(), s.label_rate);
        }
        Command::Train(common) => {
            let (cfg, out) = load(&common)?;
            for s in cmd_train(&cfg, &out)? {
                println!(
                    "{}: {} replicates, mean final loss {:.5}, {:.1} s",
                    s.kind, s.replicates, s.final_loss, s.seconds
                );
            }
        }
        Command::Sweep { common, axis } => {
            let (cfg, out) = load(&common)?;
            let (path, rows) = cmd_sweep(&cfg, &out, axis)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        Command::Verify { common, quick } => {
            let (cfg, _) = load(&common)?;
            let checks = run_all(if quick { Effort::QUICK } else { Effort::FULL }, cfg.seed)?;
            for c in &checks {
                println!("{c}");
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Check(failed.join("; ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
