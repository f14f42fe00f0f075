//! Dense matrices and reverse-mode differentiation.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{finite_difference_check, max_relative_error, numeric_gradient};
pub use graph::{Graph, NodeId};
pub use matrix::{argmax, dot, l2_norm, squared_distance, Matrix};

/// Norms below this are treated as degenerate when normalizing rows.
pub const DEFAULT_EPSILON: f64 = 1e-12;
