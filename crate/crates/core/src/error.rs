use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid label {value} at position {position}: labels must be 0 or 1")]
    InvalidLabel { position: usize, value: u8 },

    #[error("clique of size {size} exceeds model k_max = {k_max}")]
    ModelSize { size: usize, k_max: usize },

    #[error("labeling has {got} entries but graph has {expected} nodes")]
    LabelingLength { expected: usize, got: usize },

    #[error("invalid hyperedge: {0}")]
    InvalidEdge(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("too many variables for exact enumeration: {got} > {max}")]
    TooManyVariables { got: usize, max: usize },

    #[error("degenerate descriptor: {0}")]
    DegenerateDescriptor(String),

    #[error("degenerate triangle")]
    DegenerateTriangle,

    #[error("missing descriptors on {0} point set")]
    MissingDescriptors(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("left feature {0} has no ground-truth correspondence")]
    MissingGroundTruth(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown method `{name}` (available: {available})")]
    UnknownMethod { name: String, available: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed data: {0}")]
    Data(String),
}
