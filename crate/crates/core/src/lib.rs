//! Simulator for a conditional phase gate between two Λ-type ions coupled
//! through a strongly detuned optical cavity.
//!
//! The crate builds every level of the model hierarchy (full ion–cavity
//! master equation, cavity-eliminated generator, dispersive Hamiltonian,
//! two-level gate model, auxiliary-level geometric model), integrates them,
//! and scores the resulting gates and Berry phases.

pub mod dynamics;
pub mod error;
pub mod format;
pub mod gate;
pub mod geometric;
pub mod hilbert;
pub mod model;
pub mod scenario;

pub use error::{Error, Result};
pub use gate::{extract_gate, GateReport};
pub use hilbert::{DensityMatrix, HilbertSpec, Operator, StateVector};
pub use model::{JumpSet, ModelKind, SystemParams};
