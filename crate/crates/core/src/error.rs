use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A statistic was requested over an empty sample set.
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Internal bookkeeping reached a state that must be impossible.
    #[error("runtime consistency violation: {0}")]
    Consistency(String),

    #[error("invariant violated at t={time:.9}: {message}")]
    Invariant { time: f64, message: String },

    #[error("deadlock in step {step} at t={time:.9}: {diagnostic}")]
    Deadlock { step: usize, time: f64, diagnostic: String },

    #[error("scenario parse error at line {line}, column {column}: {message}")]
    ScenarioParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("scenario invalid: {}", .0.join("; "))]
    ScenarioInvalid(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
