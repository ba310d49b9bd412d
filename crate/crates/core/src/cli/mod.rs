//! The `hale` command-line front end.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error (including missing input files).
//!
//! Environment: `HALE_THREADS` sets the worker-thread count and
//! `HALE_DETERMINISTIC=1` turns on reproducible mode for `train` and
//! `benchmark`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::ErrorKind;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::eval::TieMode;
use config::Settings;

pub const THREADS_ENV: &str = "HALE_THREADS";
pub const DETERMINISTIC_ENV: &str = "HALE_DETERMINISTIC";

#[derive(Debug, Parser)]
#[command(name = "hale", version, about = "Knowledge graph embedding trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse train/valid/test TSV files into a binary cache.
    Prepare {
        /// Directory with train.txt, valid.txt and test.txt.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the cache.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model. Any config key may follow as `--key value`.
    Train {
        /// Prepared cache or raw TSV directory.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoint, manifest and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Flat key = value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Filtered MRR and Hits@N of a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// test, valid or train.
        #[arg(long, default_value = "test")]
        split: String,
        /// Tie convention; defaults to the checkpoint's.
        #[arg(long)]
        tie_mode: Option<String>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Race several strategies or activations under shared settings.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated loss or activation names.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run variants concurrently (timings become incomparable).
        #[arg(long)]
        parallel: bool,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Write entity embeddings of a checkpoint as TSV.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset for entity names; defaults to the vocabulary beside the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => 2,
        Error::Usage(_)
        | Error::UnknownKey(_)
        | Error::InvalidConfig(_)
        | Error::InvalidModel(_) => 2,
        _ => 1,
    }
}

fn settings(config: Option<&PathBuf>, overrides: &[String]) -> crate::Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = config {
        s.read_file(path)?;
    }
    if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1" || v.eq_ignore_ascii_case("true")) {
        s.set("deterministic", "true")?;
    }
    s.parse_flags(overrides)?;
    Ok(s)
}

fn configure_threads() -> crate::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn dispatch(cli: Cli) -> crate::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Prepare { data, out } => {
            print!("{}", commands::prepare(&data, &out)?);
        }
        Command::Train {
            data,
            out,
            config,
            overrides,
        } => {
            let s = settings(config.as_ref(), &overrides)?;
            let fe = commands::train(&data, &s, &out)?;
            println!("{}", serde_json::to_string_pretty(&fe)?);
        }
        Command::Eval {
            data,
            checkpoint,
            split,
            tie_mode,
            out,
        } => {
            let tie = tie_mode.map(|t| t.parse::<TieMode>()).transpose()?;
            let summary = commands::eval(&data, &checkpoint, &split, tie)?;
            let text = serde_json::to_string_pretty(&summary)?;
            if let Some(path) = out {
                std::fs::write(&path, format!("{text}\n")).map_err(|e| Error::io(&path, e))?;
            }
            println!("{text}");
        }
        Command::Benchmark {
            data,
            out,
            variants,
            config,
            parallel,
            overrides,
        } => {
            let s = settings(config.as_ref(), &overrides)?;
            if parallel {
                eprintln!("warning: variants run concurrently, their timings are not comparable");
            }
            let rows = commands::benchmark(&data, &s, &variants, &out, parallel)?;
            for r in rows {
                match (&r.error, r.test_mrr, r.test_hits10) {
                    (Some(e), _, _) => println!("{:<10} failed: {e}", r.variant),
                    (None, Some(m), Some(h)) => {
                        println!("{:<10} test mrr {m:.4} hits@10 {h:.4}", r.variant)
                    }
                    _ => println!("{:<10} {}", r.variant, r.status),
                }
            }
        }
        Command::Export {
            checkpoint,
            out,
            data,
        } => {
            let n = commands::export(&checkpoint, &out, data.as_deref())?;
            eprintln!("wrote {n} entities to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
