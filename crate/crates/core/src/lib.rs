//! Numerical laboratory for the total-variation Breuer-Major central limit
//! theorem: Hermite expansions, exact simulation of stationary Gaussian
//! sequences, the sharp-gradient doubling construction with carré du champ
//! estimates, and distributional-distance diagnostics for partial sums.

pub mod clt;
pub mod error;
pub mod gaussproc;
pub mod hermite;
pub mod lab;
pub mod malliavin;
pub mod stats;

pub use error::{LabError, Result};
