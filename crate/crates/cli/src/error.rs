use ipca_core::classifier::ClassifierError;
use ipca_core::evaluation::EvalError;
use ipca_core::outlier::OutlierError;
use ipca_core::store::StoreError;
use ipca_core::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Compute(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<OutlierError> for CliError {
    fn from(e: OutlierError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NonFiniteScore => CliError::Compute(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::DimensionMismatch { .. }
            | ClassifierError::Shape(_)
            | ClassifierError::NonFinite => CliError::Compute(e.to_string()),
            ClassifierError::Folds(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Maps a csv error on `path` to I/O or validation depending on its cause.
pub fn from_csv(path: &std::path::Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        CliError::io(path, e)
    } else {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}
