//! Positivity-preserving, energy-stable BDF2 finite-difference solver for the
//! ternary Cahn–Hilliard system with Flory–Huggins–deGennes energy.
//!
//! Modules, bottom up:
//!
//! - [`grid`]: periodic cell/face fields and the staggered difference operators
//! - [`hinv`]: `(-Δ_h)^{-1}` and the discrete `H^{-1}` norm
//! - [`energy`]: the discrete energy, its convex–concave split and derivatives
//! - [`solver`]: safeguarded Newton–CG minimization inside the Gibbs triangle
//! - [`scheme`]: the BDF2 step, the initialization step and the run driver
//! - [`diagnostics`]: modified energies, masses, extrema and certification
//! - [`harness`]: initial data, grid transfer and convergence studies
//! - [`io`]: configuration, snapshots and diagnostics CSV
//! - [`verify`]: self-check suites used by the command-line `verify`

pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod harness;
pub mod hinv;
pub mod io;
pub mod scheme;
pub mod solver;
pub mod verify;

pub use energy::{ModelParams, Phase, PhasePair};
pub use error::{Error, Result};
pub use grid::{CellField, EdgeField, GridSpec};
pub use scheme::{APreset, SchemeParams, SchemeState};
pub use solver::SolverParams;
