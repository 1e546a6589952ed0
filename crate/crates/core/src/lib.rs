//! Differentiable shallow-water toolkit: a reference finite-difference
//! solver for dataset generation, a hybrid stencil-network surrogate of the
//! same dynamics built on a hand-rolled reverse-mode tape, and gradient-based
//! reconstruction of the underwater topography from wave observations.

pub mod evaluation;
pub mod field;
pub mod format;
pub mod finn;
pub mod grid;
pub mod inversion;
pub mod optim;
pub mod rng;
pub mod scenario;
pub mod solver;
pub mod topography;
pub mod tape;
pub mod training;

pub use field::Field2D;
pub use grid::{Grid, SimConfig};
