//! `mqn`: batch driver for weight initialization, calibration, quantization,
//! inference, tone mapping, evaluation and model inspection.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag values or combinations; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// I/O or format failure on a named file; exit code 1.
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: mqn_core::Error,
    },
    #[error("{0}")]
    Run(#[from] mqn_core::Error),
}

impl CliError {
    pub fn file(path: &std::path::Path) -> impl FnOnce(mqn_core::Error) -> CliError + '_ {
        move |source| CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mqn", version, about = "Mixed-quantization inverse tone mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Architecture config file, or `default`.
    #[arg(long, default_value = "default")]
    config: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a randomly initialized weights file.
    InitWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Record activation ranges over a directory of PNG images.
    Calibrate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Quantize a calibrated weights file.
    Quantize {
        #[arg(long)]
        weights: PathBuf,
        /// float32, mixed, int16 or int8.
        #[arg(long)]
        scheme: String,
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Reconstruct HDR images from PNG inputs (file or directory).
    Infer {
        #[arg(long)]
        weights: PathBuf,
        /// Defaults to the scheme stored in the weights file.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Tone map .hdr images (file or directory) to PNG.
    Tmo {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// drago, reinhard or exposure.
        #[arg(long, conflicts_with = "random")]
        kind: Option<String>,
        /// Comma-separated key=value pairs, or a sidecar file.
        #[arg(long, requires = "kind")]
        params: Option<String>,
        /// Pick the operator and its parameters at random.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare predicted and reference .hdr directories; writes CSV.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Percentile-align each prediction to its reference first.
        #[arg(long)]
        align: bool,
        #[arg(long, default_value_t = 1.0)]
        peak: f32,
        /// Seed of the feature extractor used by the FR loss.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print the per-layer table and totals.
    Inspect {
        #[command(flatten)]
        config: ConfigArg,
        /// Show dtypes and modes of a weights file.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Input size as HxW; defaults to the config's size.
        #[arg(long)]
        size: Option<String>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("MQN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("MQN_THREADS: `{v}` is not a count")))?;
    eprintln!("threads={}", if n == 0 { "sequential".into() } else { n.to_string() });
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| CliError::Usage(format!("MQN_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::InitWeights { seed, output, config } => {
            commands::init_weights(&config.config, seed, &output)
        }
        Command::Calibrate { weights, images, output, config } => {
            commands::calibrate(&config.config, &weights, &images, &output)
        }
        Command::Quantize { weights, scheme, output, config } => {
            commands::quantize(&config.config, &weights, &scheme, &output)
        }
        Command::Infer { weights, scheme, input, output, config } => {
            commands::infer(&config.config, &weights, scheme.as_deref(), &input, &output)
        }
        Command::Tmo { input, output, kind, params, random, seed } => {
            let choice = match (random, kind) {
                (true, _) => commands::TmoChoice::Random(seed),
                (false, Some(k)) => commands::TmoChoice::Fixed(commands::tmo_params(&k, params.as_deref())?),
                (false, None) => {
                    return Err(CliError::Usage("tmo needs --kind or --random".into()))
                }
            };
            commands::tmo(&input, &output, &choice)
        }
        Command::Eval { pred, gt, align, peak, seed, output } => {
            commands::eval(&pred, &gt, align, peak, seed, output.as_deref())
        }
        Command::Inspect { config, weights, size } => {
            commands::inspect(&config.config, weights.as_deref(), size.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mqn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
