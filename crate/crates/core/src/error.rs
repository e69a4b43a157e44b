use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("singular variance at cluster {cluster} observation {observation}: v(mu) = {variance:e}")]
    SingularVariance {
        cluster: usize,
        observation: usize,
        variance: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate projection direction (quadratic form {quad_form:e}); lambda' = {lambda_prime} is too large")]
    DegenerateDirection { quad_form: f64, lambda_prime: f64 },

    #[error("linear program {0}")]
    Lp(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),
}

impl Error {
    /// True for failures of the numerical pipeline rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularVariance { .. }
                | Error::NotPositiveDefinite(_)
                | Error::DegenerateDirection { .. }
                | Error::Lp(_)
                | Error::NonConvergence(_)
                | Error::Domain(_)
        )
    }
}
