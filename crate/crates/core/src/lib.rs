//! Gradient flows of linear-growth functionals (total variation flow and
//! relatives) on uniform grids: minimizing-movement solver, weak-solution
//! certificates, time mollification and De Giorgi sup-bounds.

pub mod boundedness;
pub mod bundled;
pub mod certify;
pub mod error;
pub mod grid;
pub mod lagrangian;
pub mod mollify;
pub mod solver;

pub use error::{Error, Result};
