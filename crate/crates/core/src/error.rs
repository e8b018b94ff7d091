use std::fmt;

use thiserror::Error;

/// The regression curve a fit failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    /// Client-side model size, `alpha * l^2`.
    ModelSize,
    /// Client-side training load, `beta * l * (1 + kappa)`.
    TrainingLoad,
    /// Backward/forward cost ratio `kappa`.
    BackwardRatio,
    /// Smashed-data size, `gamma1 / (l + gamma2)`.
    SmashedData,
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Curve::ModelSize => "model-size (alpha)",
            Curve::TrainingLoad => "training-load (beta)",
            Curve::BackwardRatio => "bp/fp ratio (kappa)",
            Curve::SmashedData => "smashed-data (gamma1, gamma2)",
        };
        f.write_str(name)
    }
}

/// Why a particular `theta` candidate was rejected by [`crate::alloc::allocate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaDiagnostic {
    pub theta: usize,
    pub served: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("invalid timing samples: {0}")]
    InvalidTiming(String),

    #[error("fit failed for {curve} curve: {reason}")]
    FitFailure { curve: Curve, reason: String },

    #[error("determination coefficient undefined: truth has zero variance")]
    UndefinedR,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid client `{id}`: {reason}")]
    InvalidClient { id: String, reason: String },

    #[error("stationarity solve called outside case 3: {0}")]
    CaseMismatch(String),

    #[error("target latency {t_theta} s is not above the server-independent floor {floor} s")]
    InfeasibleTarget { t_theta: f64, floor: f64 },

    #[error("no feasible allocation found ({} theta candidates rejected)", diagnostics.len())]
    Infeasible { diagnostics: Vec<ThetaDiagnostic> },

    #[error("optimizer failed at iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("oracle guard: {0}")]
    Guard(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path} at byte {offset} (line {line}, column {column}): {message}")]
    Json {
        path: String,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error is an infeasibility (as opposed to bad input).
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible { .. } | Error::InfeasibleTarget { .. } => true,
            Error::Iteration { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
