//! Reachability analysis for randomly perturbed port-Hamiltonian systems.
//!
//! The crate couples Monte Carlo estimators for exit times, hitting
//! probabilities and committors of Langevin-type SDEs with the closed-form
//! controllability function `L = H − H(x₀)` and the linear Gramian theory
//! that predicts their small-noise asymptotics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boundary;
pub mod cli;
pub mod coarse;
pub mod dynamics;
pub mod error;
pub mod hitting;
pub mod linear;
pub mod model;
pub mod models;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Coordinate, DomainSpec, SystemSpec};
