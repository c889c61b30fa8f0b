//! Pointwise G2-structure calculus in seven dimensions, differential-geometry
//! backends (left-invariant Lie data and a periodic lattice), a Runge-Kutta
//! integrator for the Laplacian flow of closed G2-structures, and a
//! diagnostics suite that verifies the torsion/curvature identities and
//! evolution equations along computed trajectories.

pub mod scalar;
pub mod linalg;
pub mod tensor7;
pub mod g2algebra;
pub mod geometry;
pub mod torsion;
pub mod flow;
pub mod diagnostics;
pub mod scenario;
pub mod cli;

pub use scalar::{Exact, Scalar, ScalarKind};
pub use tensor7::{Metric, Symmetry, Tensor, DIM};
