use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("mode {mode:?} out of range for mesh 1/{inv_eps}")]
    ModeOutOfRange { mode: Vec<usize>, inv_eps: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrator failure at step {step} (t = {t}): {reason}")]
    IntegratorFailure { step: usize, t: f64, reason: String },

    #[error("Picard iteration failed to converge: {0}")]
    PicardDiverged(String),

    #[error("meshes not nested: {0}")]
    NotNested(String),

    #[error("scenario validation failed: {0}")]
    Validation(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error("replica {replica} (seed {seed}) failed: {source}")]
    Replica {
        replica: usize,
        seed: u64,
        source: Box<Error>,
    },

    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
