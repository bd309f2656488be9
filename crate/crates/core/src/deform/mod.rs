//! Perturbations of the complex structure and the deformation theory of
//! stationary tori under them.

mod positivity;
mod relative;
mod structures;

pub use positivity::*;
pub use relative::*;
pub use structures::*;
