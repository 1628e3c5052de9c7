//! Local hidden-variable simulation of Stern-Gerlach measurements.
//!
//! The crate follows one measurement from the stochastic action law that
//! underlies it, through the closed-form pointer wave and the trajectories of
//! the configuration `λ = (x_e, y_e, z_a)`, to Born-rule frequencies and a
//! two-wing Bell/CHSH harness.

pub mod bell;
pub mod eigenbasis;
pub mod error;
pub mod measurement;
pub mod microdynamics;
pub mod ode;
pub mod packets;
pub mod rng;
pub mod stats;
pub mod trajectories;

pub use error::{Error, Result};
