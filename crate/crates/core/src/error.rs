use thiserror::Error;

/// Errors raised by the linear algebra, propagators and unravelers.
///
/// Numeric payloads are stored as `f64` regardless of the scalar type used to
/// compute them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not hermitian (max |m - m^dagger| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("cannot normalize a zero vector (norm = {norm:e})")]
    ZeroVector { norm: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue = {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dynamical map is numerically singular (condition number {condition:e})")]
    SingularMap { condition: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("time grids do not match")]
    GridMismatch,
    #[error("channel {channel} has negative rate {rate} at t = {time}; use a non-Markovian method")]
    NegativeRate { channel: usize, rate: f64, time: f64 },
    #[error("jump probabilities sum to {total} > 1; decrease dt")]
    StepTooLarge { total: f64 },
    #[error("no jump possible: <psi|Gamma|psi> = {value:e}")]
    NoJumpPossible { value: f64 },
    #[error("reverse jump target missing at t = {time} (channel {channel}); NMQJ not applicable")]
    MissingTargetState { time: f64, channel: usize },
    #[error("W rate operator has negative eigenvalue {eigenvalue:e} at t = {time}; enable reverse jumps")]
    NegativeWEigenvalue { eigenvalue: f64, time: f64 },
    #[error("rate operator has negative eigenvalue {eigenvalue:e} at t = {time}")]
    NegativeROEigenvalue { eigenvalue: f64, time: f64 },
    #[error("division by zero: source bucket is empty")]
    DivisionByZero,
    #[error("off-diagonal block has vanishing trace ({trace:e}); extraction is unstable")]
    DegenerateBlock { trace: f64 },
    #[error("rate policy must be strictly positive (channel {channel}: r = {rate})")]
    InvalidRatePolicy { channel: usize, rate: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
