//! Hamiltonian stationary Lagrangian tori in Kähler manifolds.
//!
//! The crate works on explicit charts of a small set of backends (flat tori,
//! complex projective space, surfaces of revolution and their tilted
//! ellipsoidal perturbations, toric manifolds from Delzant polytopes). A
//! Lagrangian torus is sampled on a uniform grid; on top of it the crate
//! computes mean curvature and the Maslov form, the fourth-order stability
//! operator, rigidity and stability certificates, and the relative deformation
//! problem under perturbations of the complex structure.
//!
//! The runnable examples under `examples/` are the main entry point.

pub mod config;
pub mod deform;
pub mod error;
pub mod fields;
pub mod jacobi;
pub mod kahler;
pub mod lagrangian;
pub mod quadrature;
pub mod run;
pub mod spectral;
pub mod toric;

pub use error::{Error, Result};
