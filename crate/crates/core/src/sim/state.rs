use num_complex::Complex64;

use super::gate::{GateInstr, GateMatrix};
use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 12;

/// Pure state of `n` qubits, stored as `2^n` amplitudes in little-endian
/// basis order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

fn check_qubits(n: usize) -> Result<()> {
    if (1..=MAX_QUBITS).contains(&n) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "qubit count {n} outside 1..={MAX_QUBITS}"
        )))
    }
}

/// `|0…0⟩` on `n` qubits.
pub fn zero_state(n: usize) -> Result<StateVector> {
    StateVector::basis(n, 0)
}

impl StateVector {
    pub fn basis(n: usize, index: usize) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1usize << n;
        if index >= dim {
            return Err(Error::domain(format!(
                "basis index {index} out of range for {n} qubits"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n, amps })
    }

    /// Wraps amplitudes that are already normalized (within 1e-10).
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = Self::qubits_for_len(amps.len())?;
        let norm = norm_sqr(&amps);
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!("amplitudes have squared norm {norm}")));
        }
        Ok(StateVector { n, amps })
    }

    /// Rescales `amps` to unit norm.
    pub fn normalized(mut amps: Vec<Complex64>) -> Result<Self> {
        let n = Self::qubits_for_len(amps.len())?;
        let norm = norm_sqr(&amps).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::domain("cannot normalize a zero or non-finite vector"));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Ok(StateVector { n, amps })
    }

    fn qubits_for_len(len: usize) -> Result<usize> {
        if !len.is_power_of_two() {
            return Err(Error::domain(format!(
                "amplitude count {len} is not a power of two"
            )));
        }
        let n = len.trailing_zeros() as usize;
        check_qubits(n)?;
        Ok(n)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amps)
    }

    /// Multiplies every amplitude by `e^{iφ}`.
    pub fn with_global_phase(mut self, phi: f64) -> Self {
        let p = Complex64::from_polar(1.0, phi);
        self.amps.iter_mut().for_each(|a| *a *= p);
        self
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.n != other.n {
            return Err(Error::domain(format!(
                "dimension mismatch: {} vs {} qubits",
                self.n, other.n
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Applies `g` in place by strided iteration over the amplitudes.
    pub fn apply(&mut self, g: &GateInstr) -> Result<()> {
        g.validate(self.n)?;
        match g.matrix()? {
            GateMatrix::Single(m) => {
                let stride = 1usize << g.q1;
                for base in (0..self.amps.len()).step_by(stride << 1) {
                    for i in base..base + stride {
                        let a = self.amps[i];
                        let b = self.amps[i + stride];
                        self.amps[i] = m[0][0] * a + m[0][1] * b;
                        self.amps[i + stride] = m[1][0] * a + m[1][1] * b;
                    }
                }
            }
            GateMatrix::Two(_) => {
                // CNOT is the only two-qubit gate: a permutation of amplitudes.
                let control = 1usize << g.q2.expect("validated");
                let target = 1usize << g.q1;
                for i in 0..self.amps.len() {
                    if i & control != 0 && i & target == 0 {
                        self.amps.swap(i, i | target);
                    }
                }
            }
        }
        Ok(())
    }
}

fn norm_sqr(amps: &[Complex64]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum()
}

/// Returns `U_g |state⟩`.
pub fn apply_gate(state: &StateVector, g: &GateInstr) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply(g)?;
    Ok(out)
}

/// `|⟨a|b⟩|²`, clamped into `[0, 1]` against rounding.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr().min(1.0))
}
