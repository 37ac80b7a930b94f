use thiserror::Error;

/// Errors raised across the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("malformed data at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical degeneracy at observation {index}: {msg}")]
    NumericalDegeneracy { index: usize, msg: String },

    #[error("invalid solver start: {0}")]
    InvalidStart(String),

    #[error("sample too small: n = {n} but at least {min} observations are required")]
    Sizing { n: usize, min: usize },

    #[error("degenerate subsample in fold {fold}, stage {stage}: {treated} relevant treated rows out of {total}")]
    DegenerateSubsample {
        fold: usize,
        stage: &'static str,
        treated: usize,
        total: usize,
    },

    #[error("solver did not converge in fold {fold}, stage {stage} (kkt violation {kkt_violation:e})")]
    NotConverged {
        fold: usize,
        stage: &'static str,
        kkt_violation: f64,
    },

    #[error("stage failed in fold {fold}, stage {stage}: {msg}")]
    StageFailed {
        fold: usize,
        stage: &'static str,
        msg: String,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("study failed: {failures} of {replications} replications raised errors")]
    StudyFailed { failures: usize, replications: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
