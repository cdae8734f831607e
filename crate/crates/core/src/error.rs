use thiserror::Error;

/// Errors produced by the simulation, oracle and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("operation requires a non-empty measure")]
    EmptyMeasure,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("assumption {name} does not hold: {detail}")]
    Assumption { name: &'static str, detail: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("at step {step}: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by a malformed configuration or input document.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Decode(_))
    }
}
