//! Energy-stable multistage semi-implicit integrators for gradient flows.
//!
//! Tableaus ([`tableau`]) define the schemes, [`verify`] checks their
//! stability and order conditions, [`integrator`] advances a
//! [`integrator::GradientFlowProblem`] and [`metric`] handles flows under a
//! state-dependent inner product. [`problems`] and [`harness`] provide the
//! PDE experiments and refinement sweeps.

pub mod harness;
pub mod integrator;
pub mod linalg;
pub mod metric;
pub mod problems;
pub mod tableau;
pub mod verify;
