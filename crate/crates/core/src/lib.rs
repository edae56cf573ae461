//! Nonlinear Hodge heat flows of symplectic 2-forms on the flat four-torus.
//!
//! Pseudo-spectral discretization on periodic grids, explicit RK4 in time,
//! plus the dimension-reduced models, the linear-flow degeneracy example,
//! the soliton reduction and the diagnostics used to check all of them.

pub mod calculus;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod forms;
pub mod grid;
pub mod reduced;
pub mod scenarios;
pub mod soliton;

pub use error::{Error, Result};
pub use grid::{PeriodicGrid, ScalarField};
