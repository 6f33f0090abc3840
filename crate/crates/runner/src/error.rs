use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] gcalab::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(
        "no width reaches {target} parameters within {tolerance}: nearest is d = {nearest_d} with {nearest} ({rel_err:.4} relative error)"
    )]
    InfeasibleMatch {
        target: usize,
        tolerance: f64,
        nearest_d: usize,
        nearest: usize,
        rel_err: f64,
    },
    #[error("{0}")]
    Analysis(String),
    #[error("{0} run(s) failed")]
    RunsFailed(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl RunError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::ConfigFile { .. } | RunError::Core(gcalab::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;
