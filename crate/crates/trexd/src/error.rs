use std::io;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid run spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Core(#[from] trex_core::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// 2 for anything wrong with the inputs, 1 for unexpected runtime errors.
    pub fn exit_code(&self) -> i32 {
        use trex_core::Error as E;
        match self {
            CliError::Spec(_) => 2,
            CliError::Core(
                E::Config(_)
                | E::Dimension { .. }
                | E::Unsupported(_)
                | E::EmptyDataset
                | E::VersionMismatch { .. }
                | E::Corrupt(_)
                | E::Json(_)
                | E::Io(_),
            ) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn spec_err(msg: impl Into<String>) -> CliError {
    CliError::Spec(msg.into())
}
