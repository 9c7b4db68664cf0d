use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("evaluation produced a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("matrix is singular to working precision")]
    SingularMatrix,
    #[error("chart Jacobian is singular")]
    SingularJacobian,
    #[error("function has no sign change on the bracket")]
    NoSignChange,
    #[error("point lies outside the declared domain")]
    OutsideDomain,
    #[error("parameter lies outside the admissible range")]
    OutsideRange,
    #[error("iteration did not converge")]
    NoConvergence,
    #[error("leaf coordinates must be strictly positive")]
    NonPositiveLeaf,
    #[error("time lies outside the monotonic branch of sn")]
    OutsideMonotonicBranch,
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("trajectory left the domain at t = {t}")]
    DomainExit { t: f64 },
    #[error("integration time budget exceeded")]
    TimeBudgetExceeded,
    #[error("no return to the section within the time budget")]
    NoReturn,
    #[error("crossing is not transversal to the section")]
    NonTransversal,
    #[error("displacement is flat below the noise floor; cycle is not isolated")]
    NotIsolated,
    #[error("loop integral not resolved by the quadrature self-check")]
    Unresolved,
}
