//! Numerical laboratory for Bohmian mechanics and the operator formalism of
//! quantum measurement that it gives rise to.
//!
//! The crate is organised bottom-up:
//!
//! * [`hilbert`]: dense finite-dimensional states and operators.
//! * [`formalism`]: PVMs, POVMs, strong measurements, density matrices and
//!   instruments.
//! * [`wavefield`]: spinor wave functions on periodic grids and their
//!   split-step evolution.
//! * [`bohm`]: the guiding equation, trajectories and equilibrium ensembles.
//! * [`experiments`]: Stern-Gerlach, time-of-flight, EPRB and the other
//!   canonical scenarios, with POVM extraction.
//! * [`nogo`]: Bell, Hardy, value-map feasibility and the quadratic-map
//!   measurability test.

pub mod bohm;
pub mod error;
pub mod experiments;
pub mod formalism;
pub mod hilbert;
pub mod nogo;
pub mod rng;
pub mod stats;
pub mod wavefield;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
