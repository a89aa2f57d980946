use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    #[error("grid mismatch between grid functions")]
    GridMismatch,

    #[error("blow-past: ground state left (0, 1) at y = {y:.6e} (Q = {q:.6e})")]
    BlowPast { y: f64, q: f64 },

    #[error("tail-fit-failed: {0}")]
    TailFitFailed(String),

    #[error("roundtrip-failed: relative residual {residual:.3e} exceeds {tol:.1e}")]
    RoundtripFailed { residual: f64, tol: f64 },

    #[error("tail-divergence: {0}")]
    TailDivergence(String),

    #[error("inversion failed at level {level} (monomial {monomial:?}): {source}")]
    LadderInversion {
        level: usize,
        monomial: Vec<u32>,
        #[source]
        source: Box<Error>,
    },

    #[error("near-zero denominator <chi_M LambdaQ, LambdaQ> = {0:.3e}")]
    DegenerateDenominator(f64),

    #[error("b outside the a-priori cone: {0}")]
    ConeViolation(String),

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("constraint projection failed: {0}")]
    RankDeficient(String),

    #[error("Newton iteration did not converge: {0}")]
    NewtonFailed(String),

    #[error("rate fit failed: {0}")]
    RateFit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure lies in the numerics (inversion, Newton, fits)
    /// rather than in the requested configuration.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidParams(_)
                | Error::InsufficientResolution(_)
                | Error::ConeViolation(_)
                | Error::DomainTooSmall(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
