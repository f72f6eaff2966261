//! Reinforcement-learning synthesis of parameterized state-preparation circuits.
//!
//! The crate is layered bottom-up:
//!
//! - [`sim`]: exact statevector simulation of `{Rx, Ry, Rz, CNOT}` (plus a
//!   Clifford+T fallback set), fidelity and parameter-shift gradients.
//! - [`env`]: the sequential synthesis environment (target generation,
//!   observation encoding, shaped reward, termination).
//! - [`policy`]: an actor-critic MLP with categorical gate/qubit heads and a
//!   squashed Gaussian angle head, with hand-written backpropagation.
//! - [`refine`]: Adam, parameter-shift angle refinement (two-stage mode) and
//!   the hardware-efficient-ansatz baseline.
//! - [`train`]: rollout collection, GAE, PPO and A2C updates and the
//!   training loop with periodic evaluation.
//!
//! Qubit ordering is little-endian throughout: qubit 0 is the least
//! significant bit of a basis index.

pub mod env;
pub mod error;
pub mod policy;
pub mod refine;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
