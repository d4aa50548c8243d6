use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error(
        "contraction error: mode {mode_a} of A has length {len_a} but mode {mode_b} of B has length {len_b}"
    )]
    Contraction {
        mode_a: usize,
        mode_b: usize,
        len_a: usize,
        len_b: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
}
