use thiserror::Error;

/// Unified error type for the whole laboratory.
///
/// Numerical guards carry the offending quantities so that reports can state
/// how far an input was from acceptable, not just that it failed.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is singular or near-singular (det = {det:.3e})")]
    SingularMatrix { det: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not a unit-determinant SPD form: {reason}")]
    NonSpdInput { reason: String },

    #[error("orientation-reversing linear map (det = {det:.3e})")]
    OrientationReversing { det: f64 },

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inserted length {total:.6} reaches or exceeds the circle length 1")]
    BudgetExceeded { total: f64 },

    #[error("truncation tail bound {bound:.3e} exceeds tolerance {tol:.3e}")]
    TailTooLarge { bound: f64, tol: f64 },

    #[error("translation orbit points {i} and {j} coincide within 1e-12; orbit is rational at this precision")]
    RationalOrbit { i: i64, j: i64 },

    #[error("disjointness repair drove radius of ball {index} below 1e-12; window is infeasible")]
    InfeasibleWindow { index: i64 },

    #[error("point lies in no ball of the system")]
    NotInSystem,

    #[error("ball index {index} leaves the window; no successor ball exists")]
    WindowEdge { index: i64 },

    #[error("point is outside the ball: distance {dist:.6e} exceeds radius {radius:.6e}")]
    OutsideBall { dist: f64, radius: f64 },

    #[error("all probe samples were degenerate; cannot fit a constant")]
    DegenerateSamples,

    #[error("per-step distortion bound violated at step {step}: d = {distance:.6e} > {budget:.6e}")]
    PerStepViolation {
        step: usize,
        distance: f64,
        budget: f64,
    },

    #[error("ball system carries no valid disjointness certificate (worst clearance {clearance:.3e})")]
    NotDisjoint { clearance: f64 },

    #[error("map is undefined at a probe sample: {0}")]
    UndefinedAtSample(String),

    #[error(
        "no trap time within horizon {horizon}; closest miss at n = {closest_n} \
         (radius at {radius_ratio:.3} of threshold, displacement at {displacement_ratio:.3})"
    )]
    TrapNotFound {
        horizon: usize,
        closest_n: usize,
        radius_ratio: f64,
        displacement_ratio: f64,
    },

    #[error("fixed-point iteration failed to converge: best residual {residual:.3e}")]
    NoConvergence { residual: f64 },

    #[error("evidence incomplete, contradiction not assessable: {missing}")]
    IncompleteEvidence { missing: String },

    #[error("eigensolver did not converge")]
    EigenFailed,

    #[error("record i/o: {0}")]
    RecordIo(String),

    #[error("malformed record: {0}")]
    RecordFormat(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::RecordIo(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::RecordFormat(e.to_string())
    }
}
