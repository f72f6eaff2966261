//! Exact statevector simulation.
//!
//! Basis index `b` encodes qubit `k` in bit `k` (little-endian). Rotations
//! use half-angle conventions, `Rx(θ) = exp(−iθX/2)` and so on, which makes
//! the ±π/2 parameter-shift rule exact.

mod circuit;
pub mod dense;
mod gate;
mod gradient;
mod state;

pub use circuit::{run_circuit, Circuit};
pub use gate::{gate_matrix, GateInstr, GateKind, GateMatrix};
pub use gradient::{circuit_fidelity, fidelity_gradient, shift_gradient};
pub use state::{apply_gate, fidelity, zero_state, StateVector, MAX_QUBITS};
