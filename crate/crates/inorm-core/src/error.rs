use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the engine. `Config` and `Data` indicate bad inputs;
/// `Numeric`, `NonFinite` and `Diverged` indicate numerical failure at runtime.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// True for errors caused by invalid user input (configs, files, shapes),
    /// as opposed to numerical failure during computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::Config(_)
                | Error::Data(_)
                | Error::Io(_)
                | Error::Checkpoint(_)
        )
    }
}
