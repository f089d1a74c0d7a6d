//! Numerical laboratory for the spherically symmetric isentropic
//! relativistic Euler-Poisson system with vacuum.
//!
//! The crate couples a conservative finite-volume solver for the radial
//! system to a finite-time blowup certificate built from a testing-function
//! functional, and cross-validates the certificate's Riccati lower bound
//! against the simulated dynamics.

pub mod certificate;
pub mod characteristics;
pub mod cli;
pub mod config;
pub mod field;
pub mod model;
pub mod plot;
pub mod solver;

pub use model::{ConservedState, PhysicalParams, PrimitiveState, RadialGrid};
