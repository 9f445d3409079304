use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("state diverged at step {step}")]
    Divergence { step: usize },

    #[error("all particle weights are zero{}", step_suffix(*.step))]
    DegenerateWeights { step: Option<usize> },

    #[error("all outer weights are zero at epoch {epoch}")]
    DegenerateSystem { epoch: usize },
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
