//! `sdslab` command-line front end.
//!
//! Every subcommand reads an optional config file, applies `--seed`, writes
//! its outputs under the output root and echoes the resolved config there as
//! `config.txt`. The output root is `--out`, else `$SDSLAB_OUT_DIR`, else
//! `out`. Relative checkpoint paths resolve against the output root.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "SDSLAB_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "sdslab", version, about = "Time-step curriculum score distillation on 2D fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the view- and class-conditioned teachers and save checkpoints.
    TeacherTrain(Common),
    /// Run the two-stage distillation against the configured shape.
    Distill(Common),
    /// Failure-rate grid over schedule, band-mask and teacher toggles.
    Ablate(Common),
    /// Noise-prediction error versus displacement and time step.
    TheoryCheck(Common),
    /// Pairwise SSIM of denoised samples at full and reduced resolution.
    VarianceCheck(Common),
    /// MaskIoU of view- versus class-conditioned denoising across time steps.
    TeacherCompare(Common),
    /// Write the ground-truth field and its projections over all views.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Config file with `[section]` headers and `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    /// Render this PGM field instead of the configured ground truth.
    #[arg(long, value_name = "PGM")]
    input: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            // Printing can only fail on a closed stream; the exit code still applies.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::TeacherTrain(c) => commands::teacher_train(&c.into()),
        Command::Distill(c) => commands::distill(&c.into()),
        Command::Ablate(c) => commands::ablate(&c.into()),
        Command::TheoryCheck(c) => commands::theory_check(&c.into()),
        Command::VarianceCheck(c) => commands::variance_check(&c.into()),
        Command::TeacherCompare(c) => commands::teacher_compare(&c.into()),
        Command::Render(r) => commands::render(&r.common.into(), r.input.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

impl From<Common> for commands::Invocation {
    fn from(c: Common) -> Self {
        commands::Invocation {
            config: c.config,
            seed: c.seed,
            out: c
                .out
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out")),
        }
    }
}
