//! Learned high-order control barrier functions and constrained
//! Hamilton-Jacobi reachability for pairwise vehicle safety concepts.

pub mod concepts;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod harness;
pub mod hj;
pub mod hocbf;
pub mod learning;
pub mod polytope;

pub use error::{Error, Result};
