use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by the analysis pipeline.
///
/// Variants mirror the assumption or numerical step that failed so callers
/// (the CLI in particular) can name the violated condition.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("equilibrium is not hyperbolic: spectral gap {gap:e} below {required:e}")]
    NotHyperbolic { gap: f64, required: f64 },
    #[error("endpoint lies in the wrong region: margin {margin:e}")]
    WrongRegion { margin: f64 },
    #[error("spectral gap violated: eigenvalue with |Re| = {gap:e} < {required:e}")]
    SpectralGapViolated { gap: f64, required: f64 },
    #[error("tangential crossing at t = {t}: margins ({margin_minus:e}, {margin_plus:e}) with eta = {eta:e}")]
    TangentialCrossing {
        t: f64,
        margin_minus: f64,
        margin_plus: f64,
        eta: f64,
    },
    #[error("integration step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },
    #[error("trajectory left the working box at t = {t}")]
    LeftWorkingBox { t: f64 },
    #[error("two thresholds crossed in one step near t = {t}; step could not be refined")]
    SimultaneousEvents { t: f64 },
    #[error("anchor section h = {level} not reached within {max_time} time units")]
    AnchorNotReached { level: f64, max_time: f64 },
    #[error("trajectory does not converge to the endpoint (distance {distance:e})")]
    NotConverged { distance: f64 },
    #[error("tangential crossing data: |h_x . udot_minus| = {rate:e} <= eta = {eta:e}")]
    TangentialData { rate: f64, eta: f64 },
    #[error("rank of projection ambiguous: singular value {sigma:e} near threshold {threshold:e}")]
    RankDeficient { sigma: f64, threshold: f64 },
    #[error(
        "vector is not in the complement [R(Q+) + N(Q-)]^perp (relative residual {residual:e})"
    )]
    NotInComplement { residual: f64 },
    #[error("closed-form adjoint needs a planar system, got n = {0}")]
    NotPlanar(usize),
    #[error("Melnikov integrand tail does not decay (rate {rate:e})")]
    TailNotDecaying { rate: f64 },
    #[error("no sign change on [{a}, {b}] (f(a) = {fa:e}, f(b) = {fb:e})")]
    NoSignChange { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("degenerate root at y = {y0}: |f'| = {derivative:e}")]
    DegenerateRoot { y0: f64, derivative: f64 },
    #[error("infeasible radicand 3c^2 - 4(a+1)c + 6a = {value:e}")]
    InfeasibleRadicand { value: f64 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("shooting Newton diverged after {iterations} iterations (mismatch {mismatch:e})")]
    NewtonDiverged { iterations: usize, mismatch: f64 },
    #[error("slow variable {value} left the working interval [{lo}, {hi}]")]
    OutsideSlowRange { value: f64, lo: f64, hi: f64 },
    #[error("shooting leg missed the matching section h = {level}")]
    SectionMissed { level: f64 },
}
