use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("duplicate dataset size {0} in a single fit")]
    DuplicateAbscissa(f64),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("rank deficient design: {0}")]
    Rank(String),
    #[error("laws do not share an exponent (p1 = {p1}, p2 = {p2})")]
    SharedExponentRequired { p1: f64, p2: f64 },
    #[error("monte carlo failed: none of {0} replicates converged")]
    McFailure(usize),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
