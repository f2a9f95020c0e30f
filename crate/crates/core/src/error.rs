use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is numerically rank deficient (sigma_k = {sigma_k:e})")]
    RankDeficient { sigma_k: f64 },

    #[error("orthonormalization lost rank{} (sigma_k = {sigma_k:e})", step_suffix(.step))]
    RankFailure { step: Option<usize>, sigma_k: f64 },

    #[error("spectral gap undefined: sigma_{k} is zero")]
    GapUndefined { k: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sampling probability {0} is outside (0, 1]")]
    InvalidProbability(f64),

    #[error("cannot split a sample into {0} pieces")]
    InvalidSplit(usize),

    #[error("input matrix is zero")]
    ZeroInput,

    #[error("coherence target {target} unachievable after {attempts} attempts (best {best:.4})")]
    CoherenceUnachievable {
        target: f64,
        attempts: usize,
        best: f64,
    },

    #[error("noise constraints infeasible: {0}")]
    NoiseInfeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
