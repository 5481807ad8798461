//! Solvers for the one-dimensional Schrödinger equation with a fine periodic
//! lattice and a slowly varying external potential.

pub mod band;
pub mod blochxform;
pub mod error;
pub mod grid;
pub mod harness;
pub mod potential;
pub mod steppers;
pub mod wkb;

pub use error::{Error, Result};
