use thiserror::Error;

use crate::boxmotion::AutomorphismError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid flow matrix: {0}")]
    InvalidFlow(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported flow: {0}")]
    UnsupportedFlow(String),

    #[error(transparent)]
    Automorphism(#[from] AutomorphismError),

    #[error("singular cell matrix (det = {det:e})")]
    SingularCell { det: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("particles {i} and {j} overlap (r = {r:e})")]
    Overlap { i: usize, j: usize, r: f64 },

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("generalized viscosity undefined: A + A^T vanishes")]
    UndefinedViscosity,

    #[error("empty averaging window [{from}, {to}]")]
    EmptyWindow { from: f64, to: f64 },

    #[error("explosion at step {step}: particle {particle} has speed {speed:e}")]
    Explosion { step: u64, particle: usize, speed: f64 },

    #[error("internal consistency: {0}")]
    Internal(String),
}
