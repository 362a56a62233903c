//! Pipeline behind the `dyndiff` binary: dataset generation, training,
//! sampling, evaluation and end-to-end reproduction runs.
//!
//! Every stage reads and writes directories below the configured output
//! root:
//!
//! ```text
//! out/dataset/          training set
//! out/test/             test conditions and their expert trajectories
//! out/experiment/       recorded experiment for the data-driven projector
//! out/checkpoint/       trained denoiser (checkpoint-<alg>/ when trained per algorithm)
//! out/samples/<alg>/    sample dumps
//! out/report/           errors.csv, residuals.csv, theorem1.csv, summary.json, plots
//! ```
//!
//! Each stage directory also holds `resolved_config.json` and `inputs.json`
//! with the sha256 of every file the stage read.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{eval, gen_data, repro, sample, train};
pub use config::{Overrides, Profile, RunConfig};

/// Process exit categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage = 1,
    Validation = 2,
    Numerical = 3,
    Io = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefixes the message with the stage that failed.
    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Usage => "usage error",
            ErrorKind::Validation => "validation error",
            ErrorKind::Numerical => "numerical error",
            ErrorKind::Io => "i/o error",
        };
        write!(f, "{kind}: {}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<dyndiff::Error> for CliError {
    fn from(e: dyndiff::Error) -> Self {
        let kind = match &e {
            dyndiff::Error::Numerical(_) => ErrorKind::Numerical,
            dyndiff::Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}
