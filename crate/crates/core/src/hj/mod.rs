//! Grid-based Hamilton-Jacobi reachability.

mod boundary;
mod field;
mod grid;
mod solver;

pub use boundary::BoundaryFn;
pub use field::{Query, SchemeInfo, ValueField};
pub use grid::Grid;
pub use solver::{
    dissipation_coefficients, solve, HamiltonianKind, Retention, SolveProblem, SolverOptions, SpatialScheme,
};
