//! Numerical laboratory for mean field game systems: forward solvers,
//! successive linearization, reconstruction procedures, geometric optics
//! solutions and Carleman-weight experiments.

pub mod cost;
pub mod discretization;
pub mod error;
pub mod heat;
pub mod mfg;
pub mod linalg;
pub mod linearize;
pub mod recon;
pub mod runner;
pub mod carleman;
pub mod cgo;

pub use num_complex::Complex64 as C64;
pub use error::{LabError, Result};
