use thiserror::Error;

use crate::time_expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input: bad expression, wrong shapes, unreadable config.
    Input,
    /// Input is well formed but no observer with the requested properties exists.
    Infeasible,
    /// A numerical routine failed or a simulation diverged.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {name} at ({row}, {col})")]
    NonFinite {
        name: &'static str,
        row: usize,
        col: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("output {output} has no relative degree: C_i A^(j-1) B vanishes for every j <= {n}")]
    NoRelativeDegree { output: usize, n: usize },
    #[error("all output coefficients are structurally zero")]
    ZeroOutput,
    #[error("beta = 1: the reduced system is empty, nothing to observe")]
    NoReducibleDynamics,
    #[error("decoupling impossible: rank(N) = {rank_n} but rank(B) = {rank_b}")]
    RankMismatch { rank_n: usize, rank_b: usize },
    #[error("N^T N is singular: N ({rows}x{cols}) has rank {rank}, full column rank is required")]
    SingularN {
        rows: usize,
        cols: usize,
        rank: usize,
    },
    #[error("invalid pole set: {0}")]
    InvalidPoles(String),
    #[error("unobservable mode {re}{im:+}i of (M, C) is fixed and not among the requested poles")]
    FixedMode { re: f64, im: f64 },
    #[error("orthogonal complement is empty: rank(T) = {rank} = n")]
    EmptyComplement { rank: usize },
    #[error("functional condition violated: max |Q A^{power} B| = {residual:e} exceeds {tol:e}")]
    FunctionalCondition {
        power: usize,
        residual: f64,
        tol: f64,
    },
    #[error(
        "derivative term of output {output} is not annihilated: |Q F^{power} G e_i| = {residual:e}"
    )]
    DerivativeTerm {
        output: usize,
        power: usize,
        residual: f64,
    },
    #[error("observer matrix F is not Hurwitz (max real part {max_re})")]
    Unstable { max_re: f64 },
    #[error("infeasible design: {0}")]
    Infeasible(String),
    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("simulation diverged at step {step}; last finite sample at t = {last_finite_t}")]
    Divergence { step: usize, last_finite_t: f64 },
    #[error("output coefficient c_beta vanishes at t = {t}")]
    LeadingCoefficientZero { t: f64 },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse(_)
            | Error::Dimension(_)
            | Error::NonFinite { .. }
            | Error::InvalidArgument(_)
            | Error::InvalidPoles(_) => ErrorClass::Input,
            Error::NoRelativeDegree { .. }
            | Error::ZeroOutput
            | Error::NoReducibleDynamics
            | Error::RankMismatch { .. }
            | Error::SingularN { .. }
            | Error::FixedMode { .. }
            | Error::EmptyComplement { .. }
            | Error::FunctionalCondition { .. }
            | Error::DerivativeTerm { .. }
            | Error::Unstable { .. }
            | Error::Infeasible(_) => ErrorClass::Infeasible,
            Error::Eval(_)
            | Error::Eigen(_)
            | Error::Numerical(_)
            | Error::Divergence { .. }
            | Error::LeadingCoefficientZero { .. } => ErrorClass::Numerical,
        }
    }
}
