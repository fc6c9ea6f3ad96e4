//! Simulation of time-bin quantum teleportation in a quantum-relay layout.

pub mod error;
pub mod fock;
pub mod optics;
pub mod scenarios;
pub mod detection;
pub mod sources;
pub mod stability;
pub mod analysis;

pub use error::{Result, SimError};
