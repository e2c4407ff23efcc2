use thiserror::Error;

/// Errors raised by state construction, the jump maps and the integrators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("Fock dimension must be at least 2, got {0}")]
    InvalidDimension(usize),

    #[error("Fock level {level} is outside the truncated basis of dimension {dim}")]
    Cutoff { level: usize, dim: usize },

    #[error(
        "truncation at dim {dim} discards probability {tail_mass:.3e} \
         (tolerance {tail_tol:.1e}); increase the Fock dimension"
    )]
    Truncation {
        dim: usize,
        tail_mass: f64,
        tail_tol: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("superposition needs at least one nonzero amplitude")]
    EmptySuperposition,

    #[error("cannot condition on an event of zero probability (count rate {rate:.3e})")]
    ZeroProbabilityEvent { rate: f64 },

    #[error("negative time interval {0}")]
    NegativeInterval(f64),

    #[error("matrix dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("detector is not in its ground state at step start (excited population {0:.3e})")]
    DetectorExcited(f64),

    #[error("integrator step size underflow at t = {time} (step {step:.3e}, error estimate {error:.3e})")]
    StepSizeUnderflow { time: f64, step: f64, error: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
