use std::fmt;

use super::gate::GateInstr;
use super::state::{zero_state, StateVector};
use crate::error::{Error, Result};

/// Ordered gate list on `n` qubits. Depth is counted as the number of gates.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n: usize,
    gates: Vec<GateInstr>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Circuit { n, gates: Vec::new() }
    }

    pub fn from_gates(n: usize, gates: Vec<GateInstr>) -> Result<Self> {
        for g in &gates {
            g.validate(n)?;
        }
        Ok(Circuit { n, gates })
    }

    pub fn push(&mut self, g: GateInstr) -> Result<()> {
        g.validate(self.n)?;
        self.gates.push(g);
        Ok(())
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[GateInstr] {
        &self.gates
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Positions of the parameterized gates, in circuit order.
    pub fn rotation_indices(&self) -> Vec<usize> {
        self.gates
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind.is_rotation())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.gates.iter().filter_map(|g| g.angle).collect()
    }

    /// Overwrites the rotation angles in circuit order.
    pub fn set_angles(&mut self, angles: &[f64]) -> Result<()> {
        let idx = self.rotation_indices();
        if idx.len() != angles.len() {
            return Err(Error::domain(format!(
                "circuit has {} rotations, got {} angles",
                idx.len(),
                angles.len()
            )));
        }
        for (i, a) in idx.into_iter().zip(angles) {
            self.gates[i].angle = Some(*a);
        }
        Ok(())
    }

    pub(crate) fn set_angle(&mut self, gate_index: usize, angle: f64) {
        self.gates[gate_index].angle = Some(angle);
    }

    /// Parses the line format written by `Display`. Blank lines and `#`
    /// comments are skipped.
    pub fn from_text(n: usize, text: &str) -> Result<Self> {
        let mut c = Circuit::new(n);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let g = line.parse::<GateInstr>().map_err(|e| Error::parse(i + 1, e.to_string()))?;
            c.push(g).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(c)
    }
}

/// One gate per line.
impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.gates {
            writeln!(f, "{g}")?;
        }
        Ok(())
    }
}

/// Applies every gate of `c` to `|0…0⟩`.
pub fn run_circuit(c: &Circuit) -> Result<StateVector> {
    let mut s = zero_state(c.n)?;
    for g in &c.gates {
        s.apply(g)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{fidelity, GateKind};
    use num_complex::Complex64;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    #[test]
    fn bell_circuit() {
        let c = Circuit::from_gates(2, vec![GateInstr::ry(0, FRAC_PI_2), GateInstr::cnot(0, 1)]).unwrap();
        let s = run_circuit(&c).unwrap();
        let h = FRAC_1_SQRT_2;
        let expected = [h, 0.0, 0.0, h];
        for (a, e) in s.amps().iter().zip(expected) {
            assert!((a - Complex64::new(e, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn basis_reconstruction_picks_up_global_phase() {
        let c = Circuit::from_gates(2, vec![GateInstr::rz(0, -PI), GateInstr::cnot(0, 1)]).unwrap();
        let s = run_circuit(&c).unwrap();
        assert!((s.amps()[0] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        let zero = zero_state(2).unwrap();
        assert!((fidelity(&s, &zero).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_circuit_is_zero_state() {
        assert_eq!(run_circuit(&Circuit::new(3)).unwrap(), zero_state(3).unwrap());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = Circuit::from_gates(
            3,
            vec![
                GateInstr::rx(2, 0.1 + 0.2),
                GateInstr::cnot(2, 0),
                GateInstr::rz(1, -PI),
                GateInstr::fixed(GateKind::H, 0),
                GateInstr::ry(0, 1e-300),
            ],
        )
        .unwrap();
        let back = Circuit::from_text(3, &c.to_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn from_text_reports_line() {
        let err = Circuit::from_text(2, "RX 0 0.5\n\nCNOT 1 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn set_angles_checks_length() {
        let mut c = Circuit::from_gates(1, vec![GateInstr::rx(0, 0.0)]).unwrap();
        assert!(c.set_angles(&[]).is_err());
        c.set_angles(&[0.7]).unwrap();
        assert_eq!(c.angles(), vec![0.7]);
    }
}
