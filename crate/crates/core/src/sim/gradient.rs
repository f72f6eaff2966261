use std::f64::consts::FRAC_PI_2;

use super::circuit::{run_circuit, Circuit};
use super::state::{fidelity, StateVector};
use crate::error::{Error, Result};

/// Fidelity of `c`'s output with `target`.
pub fn circuit_fidelity(c: &Circuit, target: &StateVector) -> Result<f64> {
    fidelity(target, &run_circuit(c)?)
}

/// `∂F/∂θ` for the rotation at `gate_index` via the two-term shift rule
/// `[F(θ+π/2) − F(θ−π/2)] / 2`, exact for `exp(−iθP/2)` gates.
pub fn shift_gradient(c: &Circuit, target: &StateVector, gate_index: usize) -> Result<f64> {
    let g = c
        .gates()
        .get(gate_index)
        .ok_or_else(|| Error::domain(format!("gate index {gate_index} out of range")))?;
    let theta = match (g.kind.is_rotation(), g.angle) {
        (true, Some(a)) => a,
        _ => {
            return Err(Error::domain(format!(
                "gate {gate_index} ({}) is not a rotation",
                g.kind
            )))
        }
    };
    let mut shifted = c.clone();
    shifted.set_angle(gate_index, theta + FRAC_PI_2);
    let plus = circuit_fidelity(&shifted, target)?;
    shifted.set_angle(gate_index, theta - FRAC_PI_2);
    let minus = circuit_fidelity(&shifted, target)?;
    Ok((plus - minus) / 2.0)
}

/// Shift-rule gradient for every rotation gate, in circuit order.
pub fn fidelity_gradient(c: &Circuit, target: &StateVector) -> Result<Vec<f64>> {
    c.rotation_indices()
        .into_iter()
        .map(|i| shift_gradient(c, target, i))
        .collect()
}
