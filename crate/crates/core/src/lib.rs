//! Load flow for radial distribution feeders.
//!
//! The power-flow equations of a radial network are solved as an
//! optimization problem on a smooth manifold: either the full branch flow
//! manifold (BFM) or the quadratic-equality manifold (QE). Gradient descent,
//! Newton and an approximate Newton method are provided, together with the
//! classical LinDistFlow, backward-forward sweep and polar Newton-Raphson
//! solvers as references.

pub mod baselines;
pub mod cases;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod network;
pub mod retraction;
pub mod solvers;

pub use error::{LfError, Result};
