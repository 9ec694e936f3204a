//! Quantum state diffusion of an open two-level system, with per-trajectory
//! stochastic entropy production.

// `!(a > b)` is how NaN is rejected along with out-of-range values, and
// index loops over 3×3 components read closer to the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bloch;
pub mod config;
pub mod engine;
pub mod entropy;
pub mod io;
pub mod lindblad;
pub mod linalg;
pub mod quadrature;
pub mod reduction;
pub mod stats;
pub mod system;
pub mod verify;
