use std::fmt;
use std::io::ErrorKind;

use ifm::data::DataError;
use ifm::eval::EvalError;
use ifm::mi::MiError;
use ifm::nn::CheckpointError;
use ifm::train::TrainError;

/// Failure classes with stable process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or input files (exit 2).
    Input(String),
    /// Training produced a non-finite loss (exit 3).
    Diverged(String),
    /// Reading or writing failed for reasons other than a missing input (exit 4).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == ErrorKind::NotFound {
            CliError::Input(msg)
        } else {
            CliError::Io(msg)
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Diverged(m) => write!(f, "numeric divergence: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            // A missing input file is the caller's mistake, not a disk fault.
            DataError::IoFailure { source, .. } if source.kind() != ErrorKind::NotFound => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match &e {
            CheckpointError::IoFailure { source, .. } if source.kind() != ErrorKind::NotFound => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MiError> for CliError {
    fn from(e: MiError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            TrainError::Io { .. } => CliError::Io(e.to_string()),
            TrainError::Checkpoint(c) => c.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}
