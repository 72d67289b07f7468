//! Nonequilibrium molecular dynamics under general homogeneous incompressible
//! flows with bounded, periodically remapped simulation cells.

pub mod boxmotion;
pub mod dynamics;
pub mod error;
pub mod flowdecomp;
pub mod lattice;
pub mod linalg;
pub mod observables;
pub mod pbc;

pub use error::{Error, Result};
