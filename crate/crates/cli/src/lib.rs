//! `lcg`: reproducible experiment runs over synthetic attributed latent
//! worlds. Every command reads one JSON config (flags override it), writes
//! into an output directory and records what it wrote in `manifest.json`.

pub mod config;
pub mod manifest;
pub mod plot;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use lcg_core::diffusion::Sampler;

use config::{ExperimentConfig, Overrides};
use run::{Ctx, EditFlags, TrainTarget};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lcg", version, about = "Latent classifier guidance experiments")]
pub struct Cli {
    /// Experiment config (JSON), or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = run::parse_sampler)]
    pub sampler: Option<Sampler>,
    #[arg(long = "t-start", global = true)]
    pub t_start: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the synthetic dataset.
    Genworld,
    /// Train `diffusion`, `classifier:<attr>` or all `classifiers`.
    Train { target: String },
    /// Guided generation from noise.
    Compose,
    /// Edit source latents (linear and diffusion modes side by side).
    Edit {
        /// Closed-form linear edit only.
        #[arg(long)]
        linear: bool,
        /// Apply the config's `edits` one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Report ACC and latent FID of a sample file.
    Eval { input: Option<PathBuf> },
    /// Scatter plot of a sample file and the classifier correlation matrix.
    Plot { input: Option<PathBuf> },
    /// Check the conditional ELBO decomposition and print the residual.
    ElboCheck,
}

fn exit_code(err: &anyhow::Error) -> i32 {
    let numeric = err.chain().any(|e| {
        e.downcast_ref::<lcg_core::Error>()
            .is_some_and(lcg_core::Error::is_numeric)
    });
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out,
        sampler: cli.sampler,
        t_start: cli.t_start,
    });
    let ctx = Ctx::new(cfg)?;
    match cli.command {
        Command::Genworld => run::genworld(&ctx),
        Command::Train { target } => {
            let target: TrainTarget = target.parse().map_err(anyhow::Error::msg)?;
            run::train(&ctx, &target)
        }
        Command::Compose => run::compose(&ctx),
        Command::Edit { linear, sequential } => run::edit(&ctx, EditFlags { linear, sequential }),
        Command::Eval { input } => run::eval(&ctx, input.as_deref()),
        Command::Plot { input } => run::plot(&ctx, input.as_deref()),
        Command::ElboCheck => run::elbo_check(&ctx).map(|_| ()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
