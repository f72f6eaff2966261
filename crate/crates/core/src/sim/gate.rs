use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Gate kinds understood by the simulator.
///
/// The RL agent only ever emits `Rx`, `Ry`, `Rz` and `Cnot`; `H`, `S`, `T`
/// and `I` form the Clifford+T fallback set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    Cnot,
    H,
    S,
    T,
    I,
}

impl GateKind {
    /// The agent's gate universe, in action-index order.
    pub const UNIVERSE: [GateKind; 4] = [GateKind::Rx, GateKind::Ry, GateKind::Rz, GateKind::Cnot];

    pub const ALL: [GateKind; 8] = [
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::Cnot,
        GateKind::H,
        GateKind::S,
        GateKind::T,
        GateKind::I,
    ];

    pub fn is_rotation(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz)
    }

    pub fn is_two_qubit(self) -> bool {
        self == GateKind::Cnot
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Rx => "RX",
            GateKind::Ry => "RY",
            GateKind::Rz => "RZ",
            GateKind::Cnot => "CNOT",
            GateKind::H => "H",
            GateKind::S => "S",
            GateKind::T => "T",
            GateKind::I => "I",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GateKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown gate kind `{s}`")))
    }
}

/// Matrix of a gate on its own support.
///
/// Two-qubit matrices act on `|control, target⟩` with the control as the
/// more significant bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMatrix {
    Single([[Complex64; 2]; 2]),
    Two([[Complex64; 4]; 4]),
}

impl GateMatrix {
    pub fn dim(&self) -> usize {
        match self {
            GateMatrix::Single(_) => 2,
            GateMatrix::Two(_) => 4,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        match self {
            GateMatrix::Single(m) => m[row][col],
            GateMatrix::Two(m) => m[row][col],
        }
    }

    /// Largest entry of `|M·M† − I|`.
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += self.get(r, k) * self.get(c, k).conj();
                }
                if r == c {
                    acc -= ONE;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }
}

/// Returns the matrix of `kind`, using half-angle rotation conventions
/// `R_P(θ) = exp(−iθP/2)`.
pub fn gate_matrix(kind: GateKind, angle: Option<f64>) -> Result<GateMatrix> {
    let need_angle = || {
        angle.ok_or_else(|| Error::domain(format!("{kind} requires an angle")))
    };
    let m = match kind {
        GateKind::Rx => {
            let half = need_angle()? / 2.0;
            let (s, c) = half.sin_cos();
            GateMatrix::Single([
                [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
            ])
        }
        GateKind::Ry => {
            let half = need_angle()? / 2.0;
            let (s, c) = half.sin_cos();
            GateMatrix::Single([
                [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
            ])
        }
        GateKind::Rz => {
            let half = need_angle()? / 2.0;
            GateMatrix::Single([
                [Complex64::from_polar(1.0, -half), ZERO],
                [ZERO, Complex64::from_polar(1.0, half)],
            ])
        }
        GateKind::Cnot => GateMatrix::Two([
            [ONE, ZERO, ZERO, ZERO],
            [ZERO, ONE, ZERO, ZERO],
            [ZERO, ZERO, ZERO, ONE],
            [ZERO, ZERO, ONE, ZERO],
        ]),
        GateKind::H => {
            let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
            GateMatrix::Single([[h, h], [h, -h]])
        }
        GateKind::S => GateMatrix::Single([[ONE, ZERO], [ZERO, Complex64::i()]]),
        GateKind::T => GateMatrix::Single([
            [ONE, ZERO],
            [ZERO, Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)],
        ]),
        GateKind::I => GateMatrix::Single([[ONE, ZERO], [ZERO, ONE]]),
    };
    Ok(m)
}

/// One gate application.
///
/// `q1` is the qubit the gate acts on (the target for CNOT) and `q2` is the
/// CNOT control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateInstr {
    pub kind: GateKind,
    pub q1: usize,
    pub q2: Option<usize>,
    pub angle: Option<f64>,
}

impl GateInstr {
    pub fn rotation(kind: GateKind, qubit: usize, angle: f64) -> Self {
        debug_assert!(kind.is_rotation());
        GateInstr {
            kind,
            q1: qubit,
            q2: None,
            angle: Some(angle),
        }
    }

    pub fn rx(qubit: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rx, qubit, angle)
    }

    pub fn ry(qubit: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Ry, qubit, angle)
    }

    pub fn rz(qubit: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rz, qubit, angle)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        GateInstr {
            kind: GateKind::Cnot,
            q1: target,
            q2: Some(control),
            angle: None,
        }
    }

    /// A fixed single-qubit gate from the Clifford+T set.
    pub fn fixed(kind: GateKind, qubit: usize) -> Self {
        GateInstr {
            kind,
            q1: qubit,
            q2: None,
            angle: None,
        }
    }

    pub fn control(&self) -> Option<usize> {
        self.q2
    }

    /// Checks the structural invariants against a register of `n` qubits.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.q1 >= n {
            return Err(Error::domain(format!(
                "{} acts on qubit {} but the register has {n}",
                self.kind, self.q1
            )));
        }
        match (self.kind.is_two_qubit(), self.q2) {
            (true, Some(c)) if c >= n => {
                return Err(Error::domain(format!(
                    "CNOT control {c} out of range for {n} qubits"
                )))
            }
            (true, Some(c)) if c == self.q1 => {
                return Err(Error::domain(format!("CNOT control equals target ({c})")))
            }
            (true, None) => return Err(Error::domain("CNOT without control qubit")),
            (false, Some(_)) => {
                return Err(Error::domain(format!(
                    "{} does not take a second qubit",
                    self.kind
                )))
            }
            _ => {}
        }
        match (self.kind.is_rotation(), self.angle) {
            (true, None) => Err(Error::domain(format!("{} requires an angle", self.kind))),
            (true, Some(a)) if !a.is_finite() => {
                Err(Error::NonFinite(format!("{} angle", self.kind)))
            }
            (false, Some(_)) => Err(Error::domain(format!(
                "{} does not take an angle",
                self.kind
            ))),
            _ => Ok(()),
        }
    }

    pub fn matrix(&self) -> Result<GateMatrix> {
        gate_matrix(self.kind, self.angle)
    }
}

/// Serializes as `KIND q1 [q2] [angle]`, the angle with 17 significant digits.
impl fmt::Display for GateInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind, self.q1)?;
        if let Some(c) = self.q2 {
            write!(f, " {c}")?;
        }
        if let Some(a) = self.angle {
            write!(f, " {a:.16e}")?;
        }
        Ok(())
    }
}

impl FromStr for GateInstr {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut tokens = line.split_whitespace();
        let kind: GateKind = tokens
            .next()
            .ok_or_else(|| Error::domain("empty gate line"))?
            .parse()?;
        let index = |tok: Option<&str>, what: &str| -> Result<usize> {
            tok.ok_or_else(|| Error::domain(format!("{kind}: missing {what}")))?
                .parse()
                .map_err(|e| Error::domain(format!("{kind}: bad {what}: {e}")))
        };
        let q1 = index(tokens.next(), "qubit")?;
        let q2 = if kind.is_two_qubit() {
            Some(index(tokens.next(), "control qubit")?)
        } else {
            None
        };
        let angle = if kind.is_rotation() {
            let tok = tokens
                .next()
                .ok_or_else(|| Error::domain(format!("{kind}: missing angle")))?;
            Some(
                tok.parse::<f64>()
                    .map_err(|e| Error::domain(format!("{kind}: bad angle: {e}")))?,
            )
        } else {
            None
        };
        if let Some(extra) = tokens.next() {
            return Err(Error::domain(format!("{kind}: unexpected token `{extra}`")));
        }
        Ok(GateInstr {
            kind,
            q1,
            q2,
            angle,
        })
    }
}
