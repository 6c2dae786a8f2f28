use thiserror::Error;

/// Errors raised by the analysis pipeline.
///
/// Variants are grouped into families (see [`ErrorFamily`]) so front ends can
/// map them onto distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("eliminated block of the admittance matrix is numerically singular (cond ~ {cond:.3e})")]
    SingularElimination { cond: f64 },

    #[error("base voltage at load bus {bus} is zero")]
    ZeroBaseVoltage { bus: usize },

    #[error("voltage magnitude {magnitude:.3e} at bus {bus} is below the collapse floor")]
    VoltageCollapseGuard { bus: usize, magnitude: f64 },

    #[error("eigenvalue {index} has a non-negligible imaginary part ({re:.4e} + {im:.4e}i)")]
    ComplexSpectrum { index: usize, re: f64, im: f64 },

    #[error("eigenvalues are not separated: minimum gap {gap:.3e}")]
    DegenerateSpectrum { gap: f64 },

    #[error("state is too close to the singular surface (|lambda1| = {lambda1:.3e})")]
    NearSingular { lambda1: f64 },

    #[error("determinant or adjugate overflowed the scalar range")]
    Overflow,

    #[error("trajectory did not terminate on the singular surface ({reason})")]
    NoSingularContact { reason: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("converged point is not a pseudo-saddle: {detail}")]
    NotASaddle { detail: String },

    #[error("transformed Jacobian has no eigenvalue above the unstable threshold")]
    NoUnstableDirection,

    #[error("transformed Jacobian has {count} unstable eigenvalues")]
    MultipleUnstable { count: usize },

    #[error("SEP lies on the approximate manifold (|d_p(x_s)| = {value:.3e})")]
    DegenerateSep { value: f64 },

    #[error("algebraic equations did not converge after {iterations} Newton steps (|g| = {residual:.3e})")]
    AlgebraicNoConvergence { iterations: usize, residual: f64 },

    #[error("initial condition is not an equilibrium: |f| = {f_norm:.3e}, |g| = {g_norm:.3e}")]
    InvalidInitialCondition { f_norm: f64, g_norm: f64 },

    #[error("CCT bracket invalid: {detail}")]
    BracketInvalid { detail: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Parse,
    Numeric,
    NonConvergence,
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        use Error::*;
        match self {
            Parse(_) | InvalidParameter(_) | Dimension(_) | ZeroBaseVoltage { .. } => ErrorFamily::Parse,
            NoConvergence { .. }
            | AlgebraicNoConvergence { .. }
            | NotASaddle { .. }
            | NoSingularContact { .. }
            | BracketInvalid { .. } => ErrorFamily::NonConvergence,
            _ => ErrorFamily::Numeric,
        }
    }
}
