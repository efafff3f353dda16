use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nystrom_ngd::harness::{dump_spectrum, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(version, about = "Natural gradient descent with Nystrom-preconditioned CG for PINNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV traces and summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the normalized top-K Gramian eigenvalues at the initial parameters.
    Spectrum {
        config: PathBuf,
        #[arg(long)]
        top: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load(path: &PathBuf, o: &Overrides) -> nystrom_ngd::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(out) = &o.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.ngd.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> nystrom_ngd::Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let out = run_experiment(&cfg)?;
            for p in &out.csv_paths {
                eprintln!("wrote {}", p.display());
            }
            println!("{}", serde_json::to_string_pretty(&out.summary)?);
        }
        Command::Spectrum { config, top, overrides } => {
            let cfg = load(&config, &overrides)?;
            let (path, ratios) = dump_spectrum(&cfg, top)?;
            eprintln!("wrote {}", path.display());
            for r in ratios {
                println!("{r:e}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
