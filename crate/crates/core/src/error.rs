//! Error type shared by the simulator, the experiment layer and the CLI.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {source_name}{}: {message}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        source_name: String,
        line: Option<usize>,
        message: String,
    },

    #[error("capacity error: {n_spins} spins exceeds the limit of {limit} (2^{n_spins} amplitudes)")]
    Capacity { n_spins: usize, limit: usize },

    #[error(
        "non-finite amplitudes in realization {index} (seed {seed:#018x}) at period {period}, substep {substep}"
    )]
    NumericalFailure {
        seed: u64,
        index: u64,
        period: usize,
        substep: usize,
    },

    #[error("ensemble failure: {failed} of {total} realizations failed (first: {first})")]
    Ensemble {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("QFI estimators disagree at period {period}: pair {pair:e}, fidelity {fidelity:e}, generator {generator:e}")]
    OracleMismatch {
        period: usize,
        pair: f64,
        fidelity: f64,
        generator: f64,
    },

    #[error("fit domain error: {0}")]
    FitDomain(String),

    #[error("no crossover detected: {0}")]
    NoCrossover(String),

    #[error("I/O error at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Capacity { .. } => 2,
            Error::NumericalFailure { .. }
            | Error::Ensemble { .. }
            | Error::OracleMismatch { .. }
            | Error::FitDomain(_)
            | Error::NoCrossover(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
