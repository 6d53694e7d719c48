use thiserror::Error;

/// All failures surfaced by the library, split by whether the input was
/// invalid or the numerics degenerated.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("covariance is not positive semidefinite: eigenvalue {eigenvalue} below tolerance {tolerance}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("row {row} of Z has zero norm; checked quantities require nonzero rows")]
    ZeroNoiseRow { row: usize },

    #[error("Gram matrix is numerically singular (smallest eigenvalue {min_eig}, largest {max_eig})")]
    SingularGram { min_eig: f64, max_eig: f64 },

    #[error("degenerate perturbation: |d| = {d_abs} below threshold {threshold}")]
    DegeneratePerturbation { d_abs: f64, threshold: f64 },

    #[error("data not linearly separable (dual diverged after {iterations} iterations, squared-hinge probe min margin {probe_margin})")]
    NotSeparable { iterations: usize, probe_margin: f64 },

    #[error("gradient descent diverged: loss increased over {0} consecutive snapshots; use a smaller step")]
    DivergentLoss(usize),

    #[error("classifier is not positively aligned with the signal: <w, mu> = {0} <= 0")]
    NonPositiveAlignment(f64),

    #[error("exact test error needs Gaussian noise (g constant one, Gaussian coordinates); use Monte Carlo for this spec")]
    ExactRiskUnavailable,

    #[error("unknown theorem id `{0}`")]
    UnknownTheorem(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("i/o failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv write failure: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the failure is bad input rather than a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::NotPsd { .. }
                | Error::ZeroNoiseRow { .. }
                | Error::UnknownTheorem(_)
                | Error::InvalidArgument(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
