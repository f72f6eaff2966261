//! Full-matrix reference simulator, used as an oracle for the strided
//! implementation on small registers.

use num_complex::Complex64;

use super::gate::{GateInstr, GateKind, GateMatrix};
use super::state::StateVector;
use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<Complex64>>;

const MAX_DENSE_QUBITS: usize = 6;

fn identity(d: usize) -> Matrix {
    (0..d)
        .map(|r| {
            (0..d)
                .map(|c| if r == c { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
                .collect()
        })
        .collect()
}

fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (da, db) = (a.len(), b.len());
    let mut out = vec![vec![Complex64::new(0.0, 0.0); da * db]; da * db];
    for i in 0..da {
        for j in 0..da {
            for k in 0..db {
                for l in 0..db {
                    out[i * db + k][j * db + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

fn single(m: &GateMatrix) -> Matrix {
    (0..2).map(|r| (0..2).map(|c| m.get(r, c)).collect()).collect()
}

/// `⊗_k factors[k]` with qubit 0 as the rightmost (least significant) factor.
fn tensor_by_qubit(factors: &[Matrix]) -> Matrix {
    factors
        .iter()
        .rev()
        .fold(identity(1), |acc, f| kron(&acc, f))
}

/// The `2^n × 2^n` matrix of `g` embedded in an `n`-qubit register.
pub fn full_matrix(g: &GateInstr, n: usize) -> Result<Matrix> {
    if n > MAX_DENSE_QUBITS {
        return Err(Error::domain(format!("dense reference limited to {MAX_DENSE_QUBITS} qubits")));
    }
    g.validate(n)?;
    let id2 = identity(2);
    if g.kind == GateKind::Cnot {
        let control = g.q2.expect("validated");
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let p0 = vec![vec![one, zero], vec![zero, zero]];
        let p1 = vec![vec![zero, zero], vec![zero, one]];
        let x = vec![vec![zero, one], vec![one, zero]];
        let mut off = vec![id2.clone(); n];
        off[control] = p0;
        let mut on = vec![id2; n];
        on[control] = p1;
        on[g.q1] = x;
        Ok(add(&tensor_by_qubit(&off), &tensor_by_qubit(&on)))
    } else {
        let mut factors = vec![id2; n];
        factors[g.q1] = single(&g.matrix()?);
        Ok(tensor_by_qubit(&factors))
    }
}

/// Applies `g` by dense matrix-vector multiplication.
pub fn apply_dense(state: &StateVector, g: &GateInstr) -> Result<StateVector> {
    let m = full_matrix(g, state.num_qubits())?;
    let amps = m
        .iter()
        .map(|row| row.iter().zip(state.amps()).map(|(a, b)| a * b).sum())
        .collect();
    StateVector::normalized(amps)
}
