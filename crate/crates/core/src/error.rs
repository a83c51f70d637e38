use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix nearly singular at x = {x}: |det| = {det_abs:e}")]
    NearSingular { x: f64, det_abs: f64 },

    #[error("no limit at infinity (tail spread {spread:e}, tolerance {tol:e})")]
    NoLimit { spread: f64, tol: f64 },

    #[error("point {z_im:e} from the real axis is closer than {delta:e}; use boundary values")]
    TooCloseToAxis { z_im: f64, delta: f64 },

    #[error("point is on the wrong side of the real axis for this projection (Im z = {z_im})")]
    WrongHalfPlane { z_im: f64 },

    #[error("quadrature did not converge: estimate {estimate}, discrepancy {discrepancy:e}")]
    QuadratureNotConverged { estimate: f64, discrepancy: f64 },

    #[error("phase jump of {jump} rad near x = {x} survives refinement")]
    ArgumentJump { x: f64, jump: f64 },

    #[error("|f(x)| = {modulus:e} below floor at x = {x}")]
    NearZero { x: f64, modulus: f64 },

    #[error("winding number residual {residual} exceeds 0.1")]
    WindingNotInteger { residual: f64 },

    #[error("invalid partial indices: {0}")]
    InvalidIndices(String),

    #[error("solvability conditions failed; step cannot be solved")]
    NotSolvable,

    #[error("explicit constant targets entry ({row}, {col}), which is not free")]
    PolicyConflict { row: usize, col: usize },

    #[error("requested order {requested} exceeds achieved order {achieved}")]
    OrderExceeded { requested: usize, achieved: usize },

    #[error("no index pair with difference at least 2")]
    NoUnstablePair,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("function has no analytic extension off the real axis")]
    NoExtension,
}

pub type Result<T> = std::result::Result<T, Error>;
