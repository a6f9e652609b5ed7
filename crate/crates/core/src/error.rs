//! Error type shared by every stage of the pipeline.

/// Unified error for parsing, numerics, model construction and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Ragged data or an operand whose dimensions do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// Unknown, missing or inconsistent class labels.
    #[error("label error: {0}")]
    Label(String),
    /// Structurally valid input with unusable content (empty series, missing values).
    #[error("data error: {0}")]
    Data(String),
    /// Decomposition window outside `[2, N-1]` or a series too short to embed.
    #[error("window error: {0}")]
    Window(String),
    /// Component grouping produced an invalid partition.
    #[error("grouping error: {0}")]
    Grouping(String),
    /// Iteration cap exceeded, non-finite values, or a singular system.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Empty or out-of-range region in the channel x segment partition.
    #[error("region error: {0}")]
    Region(String),
    /// Invalid Markov random field topology.
    #[error("graph error: {0}")]
    Graph(String),
    /// Invalid state-space size for the Markov random field.
    #[error("state error: {0}")]
    State(String),
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),
    /// Request exceeding a hard resource guard (for example exhaustive
    /// enumeration over too large a state space).
    #[error("capacity error: {0}")]
    Capacity(String),
    /// Network layout that cannot process the requested input (for example an
    /// image smaller than the total downsampling factor).
    #[error("architecture error: {0}")]
    Architecture(String),
    /// Checkpoint that cannot be decoded or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenient alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
