//! `qtarget`: predict the QP that drives an image to a target PSNR, train
//! the model files that make that possible, and measure how well it works.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

/// Environment variable naming a directory of `<id>.json` model sets that
/// shadows the bundled defaults. Resolution order: explicit path, then this
/// directory, then the bundled models.
pub const MODEL_DIR_ENV: &str = "QTARGET_MODEL_DIR";

#[derive(Parser)]
#[command(
    name = "qtarget",
    version,
    about = "Encoder-free QP selection for target-quality still image coding"
)]
struct Cli {
    /// Suppress warnings (errors still print).
    #[arg(long, short = 'q', global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Centered,
    Literal,
}

impl From<ModeArg> for qtarget::transform::QuantMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Centered => qtarget::transform::QuantMode::Centered,
            ModeArg::Literal => qtarget::transform::QuantMode::Literal,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print per-image LE values (log quantization error) as CSV.
    Le {
        /// Image files (PGM, PNG, or raw .y8 with --width/--height).
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Quantizer steps, comma separated, strictly increasing.
        #[arg(long, default_value = "8,16,32")]
        qsteps: String,
        /// Error measurement mode.
        #[arg(long, value_enum, default_value = "centered")]
        mode: ModeArg,
        /// Width for raw luma inputs.
        #[arg(long)]
        width: Option<usize>,
        /// Height for raw luma inputs.
        #[arg(long)]
        height: Option<usize>,
    },

    /// Predict the QP for a target PSNR, one CSV row per image.
    Predict {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Target luma PSNR in dB, exclusive range (0, 100).
        #[arg(long)]
        target_psnr: f64,
        /// Model set: a JSON path, or a model id (libaom, x265, hm) looked up
        /// in $QTARGET_MODEL_DIR and then the bundled defaults.
        #[arg(long)]
        model: String,
        /// Emit one JSON decision per image (all intermediates) instead of CSV.
        #[arg(long)]
        audit: bool,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },

    /// Sweep a corpus through an encoder and fit a model set.
    Train {
        /// Directory of training images (PGM/PNG).
        #[arg(long)]
        corpus: PathBuf,
        /// Adapter: "reference" or a JSON adapter config path.
        #[arg(long)]
        adapter: String,
        /// QPs to sweep, "lo..hi" inclusive or comma separated.
        #[arg(long, default_value = "4..40")]
        qps: String,
        /// Quantizer steps for LE.
        #[arg(long, default_value = "8,16,32")]
        qsteps: String,
        /// Output model set JSON.
        #[arg(long)]
        out: PathBuf,
        /// Sweep records CSV; written incrementally while the sweep runs.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Reuse completed (image, qp) cells from --records.
        #[arg(long)]
        resume: bool,
        /// Also dump every (q_step, qp) cell's fit as CSV.
        #[arg(long)]
        grid_out: Option<PathBuf>,
        /// Encoder id stored in the model set (default: the adapter's).
        #[arg(long)]
        encoder_id: Option<String>,
        /// QP-lambda map JSON for the model set (default: HEVC log-linear).
        #[arg(long)]
        qp_lambda: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Working directory for external adapters.
        #[arg(long)]
        workdir: Option<PathBuf>,
    },

    /// Run the control loop over a corpus and report accuracy metrics.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Targets in dB: "35..45" (integer steps) or comma separated.
        #[arg(long, default_value = "35..45")]
        targets: String,
        #[arg(long)]
        model: String,
        /// Adapter: "reference" or a JSON adapter config path.
        #[arg(long)]
        adapter: String,
        /// PSNRs strictly below this are bad cases.
        #[arg(long, default_value_t = 39.0)]
        bad_case_threshold: f64,
        /// Directory receiving per-target CSV/JSON reports.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        workdir: Option<PathBuf>,
    },

    /// Generate a seeded synthetic corpus (no external assets needed).
    GenCorpus {
        /// Output directory for PGM files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        /// Seed; identical seeds reproduce identical corpora byte for byte.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of: noise, gradient, flat.
        #[arg(long, default_value = "noise,gradient")]
        kinds: String,
    },

    /// List bundled model sets, or export one as JSON.
    Models {
        /// Model id to export.
        #[arg(long)]
        export: Option<String>,
        /// Destination for --export.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Command outcomes map onto the exit-code contract: 0 success, 1 runtime
/// failure, 2 usage/config error (clap's own parse errors also exit 2).
pub enum CliError {
    Usage(String),
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<qtarget::Error> for CliError {
    fn from(e: qtarget::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE, which turns `qtarget models | head` into a
    // println! panic; restore the default disposition.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    let cli = Cli::parse();
    commands::set_quiet(cli.quiet);
    let result = match cli.command {
        Command::Le {
            images,
            qsteps,
            mode,
            width,
            height,
        } => commands::le(&images, &qsteps, mode.into(), width, height),
        Command::Predict {
            images,
            target_psnr,
            model,
            audit,
            parallelism,
            width,
            height,
        } => commands::predict(
            &images,
            target_psnr,
            &model,
            audit,
            parallelism,
            width,
            height,
        ),
        Command::Train {
            corpus,
            adapter,
            qps,
            qsteps,
            out,
            records,
            resume,
            grid_out,
            encoder_id,
            qp_lambda,
            parallelism,
            workdir,
        } => commands::train(commands::TrainArgs {
            corpus,
            adapter,
            qps,
            qsteps,
            out,
            records,
            resume,
            grid_out,
            encoder_id,
            qp_lambda,
            parallelism,
            workdir,
        }),
        Command::Evaluate {
            corpus,
            targets,
            model,
            adapter,
            bad_case_threshold,
            out_dir,
            parallelism,
            workdir,
        } => commands::evaluate(commands::EvaluateArgs {
            corpus,
            targets,
            model,
            adapter,
            bad_case_threshold,
            out_dir,
            parallelism,
            workdir,
        }),
        Command::GenCorpus {
            out,
            count,
            width,
            height,
            seed,
            kinds,
        } => commands::gen_corpus(&out, count, width, height, seed, &kinds),
        Command::Models { export, out } => commands::models(export.as_deref(), out.as_deref()),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
