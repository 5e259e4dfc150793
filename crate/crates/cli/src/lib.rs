//! `dualseg` command-line front end: phantom generation, dual-source
//! training, cross-evaluation and overlay rendering.
//!
//! Exit statuses: 0 success, 1 other failure, 2 configuration error,
//! 3 I/O error or missing input, 4 non-finite training loss, 5 checkpoint
//! does not match the configured architecture.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod overlay;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ExperimentConfig;
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "dualseg", version, about = "Dual-source PET/CT lesion segmentation experiments")]
pub struct Cli {
    /// Floating-point width for training and inference.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Replace every seed in the config with this one.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort and its manifest.
    Phantom(CommonArgs),
    /// Split the cohort and train the label-A and label-B models.
    Train(CommonArgs),
    /// Score both models against both annotation sets on the test patients.
    Eval(CommonArgs),
    /// Render model A/B predictions over one axial slice.
    Overlay {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        patient: Option<String>,
        #[arg(long)]
        z: Option<usize>,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Phantom(c) | Command::Train(c) | Command::Eval(c) => c,
            Command::Overlay { common, .. } => common,
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<String> {
    let common = cli.command.common();
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = cli.seed_override {
        cfg.override_seed(seed);
        cfg.validate()?;
    }
    let out = &common.out;
    match &cli.command {
        Command::Phantom(_) => {
            let m = commands::cmd_phantom(&cfg, out)?;
            Ok(format!("wrote {} patients to {}", m.patients.len(), out.display()))
        }
        Command::Train(_) => {
            let (a, b) = match cli.precision {
                Precision::F32 => {
                    let o = commands::cmd_train::<f32>(&cfg, out)?;
                    (o.report_a, o.report_b)
                }
                Precision::F64 => {
                    let o = commands::cmd_train::<f64>(&cfg, out)?;
                    (o.report_a, o.report_b)
                }
            };
            Ok(format!(
                "model A: best epoch {} (val {:.4}); model B: best epoch {} (val {:.4})",
                a.best_epoch, a.best_val_loss, b.best_epoch, b.best_val_loss
            ))
        }
        Command::Eval(_) => {
            let o = match cli.precision {
                Precision::F32 => commands::cmd_eval::<f32>(&cfg, out)?,
                Precision::F64 => commands::cmd_eval::<f64>(&cfg, out)?,
            };
            Ok(dualseg_core::eval::matrix_csv(&o.matrix))
        }
        Command::Overlay { patient, z, .. } => {
            let req = commands::OverlayRequest { patient_id: patient.clone(), z: *z };
            let path = commands::cmd_overlay(&cfg, out, &req)?;
            Ok(format!("wrote {}", path.display()))
        }
    }
}

/// Parses `args`, runs, reports to stdout/stderr, and returns the exit status.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
