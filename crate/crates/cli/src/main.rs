use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eddytv_cli::commands::{cmd_invert, cmd_mesh, cmd_report, cmd_synth};
use eddytv_cli::config::{Overrides, Resolved, RunConfig};
use eddytv_cli::{configure_threads, Result};

/// Conductivity reconstruction from boundary electric-field data.
#[derive(Parser)]
#[command(name = "eddytv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; the preset defaults apply without one.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Base experiment (1, 2 or 3).
    #[arg(long)]
    preset: Option<u32>,
    /// Uniform refinements of the inversion mesh.
    #[arg(long)]
    refine: Option<usize>,
    /// Relative noise level of the synthetic data.
    #[arg(long)]
    noise: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<Resolved> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let ov = Overrides {
            seed: self.seed,
            threads: self.threads,
            preset: self.preset,
            refine: self.refine,
            noise: self.noise,
        };
        file.resolve(&ov)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the mesh and print its size.
    Mesh {
        #[command(flatten)]
        common: Common,
        #[arg(long, short, default_value = "mesh.txt")]
        out: PathBuf,
    },
    /// Generate synthetic boundary data for the configured truth.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, short, default_value = "trace.txt")]
        out: PathBuf,
    },
    /// Reconstruct the conductivity from a trace file.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long, short, default_value = "trace.txt")]
        trace: PathBuf,
        #[arg(long, short, default_value = "run")]
        out_dir: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Summarize a finished run and export the truth field.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Mesh { common, .. }
        | Command::Synth { common, .. }
        | Command::Invert { common, .. }
        | Command::Report { common, .. } => common,
    };
    let cfg = common.resolve()?;
    configure_threads(cfg.threads);
    match &cli.command {
        Command::Mesh { out, .. } => {
            let summary = cmd_mesh(&cfg, out)?;
            println!("{summary}");
        }
        Command::Synth { out, .. } => {
            let trace = cmd_synth(&cfg, out)?;
            println!("wrote {} ({} Gamma faces, noise {}, seed {})", out.display(), trace.values.len(), trace.noise, trace.seed);
        }
        Command::Invert { trace, out_dir, resume, .. } => {
            let state = cmd_invert(&cfg, trace, out_dir, resume.as_deref())?;
            if let Some(r) = state.history.last() {
                println!("k {} L {:.6e} G {:.6e} sigma_err {:?}", r.k, r.lagrangian, r.misfit, r.sigma_error);
            }
        }
        Command::Report { run_dir, .. } => {
            let report = cmd_report(&cfg, run_dir)?;
            println!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
