//! Orbital-basis tools for the Laughlin state on a cylinder: exact
//! expansion, renewal structure, correlations, parent Hamiltonians and a
//! plasma Monte Carlo sampler.

pub mod error;
pub mod correlations;
pub mod eigen;
pub mod expansion;
pub mod fock;
pub mod hamiltonian;
pub mod lattice;
pub mod plasma;
pub mod renewal;
pub mod verify;

pub use error::{Error, Result};
