//! Continuous angle optimization: Adam, parameter-shift refinement of a
//! fixed circuit structure, the two-stage trigger, and the
//! hardware-efficient-ansatz baseline.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::TargetSpec;
use crate::error::{Error, Result};
use crate::sim::{circuit_fidelity, fidelity_gradient, Circuit, GateInstr, StateVector};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::domain(format!(
                "adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    state.step(params, grads)
}

/// Maps an angle into `[−π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub max_steps: usize,
    pub lr: f64,
    /// Stall threshold on the change of `1 − F`.
    pub tol: f64,
    /// Consecutive stalled steps before stopping.
    pub patience: usize,
    /// Stop once `1 − F` falls to this value.
    pub sfe_stop: Option<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_steps: 300,
            lr: 0.1,
            tol: 1e-7,
            patience: 10,
            sfe_stop: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// Best-fidelity iterate.
    pub circuit: Circuit,
    pub fidelity: f64,
    /// Fidelity before the first step and after each step.
    pub trace: Vec<f64>,
    pub steps_used: usize,
}

/// Maximizes fidelity over the rotation angles of `c`, keeping its gate
/// structure fixed.
pub fn refine_angles(c: &Circuit, target: &StateVector, cfg: &RefineConfig) -> Result<RefineOutcome> {
    let initial = circuit_fidelity(c, target)?;
    let mut out = RefineOutcome {
        circuit: c.clone(),
        fidelity: initial,
        trace: vec![initial],
        steps_used: 0,
    };
    let mut angles = c.angles();
    let reached = |f: f64| cfg.sfe_stop.is_some_and(|e| 1.0 - f <= e);
    if angles.is_empty() || reached(initial) {
        return Ok(out);
    }

    let mut adam = AdamState::new(angles.len(), cfg.lr);
    let mut current = c.clone();
    let mut prev_cost = 1.0 - initial;
    let mut stalled = 0;
    for step in 1..=cfg.max_steps {
        let grad: Vec<f64> = fidelity_gradient(&current, target)?
            .into_iter()
            .map(|g| -g)
            .collect();
        adam.step(&mut angles, &grad)?;
        angles.iter_mut().for_each(|a| *a = wrap_angle(*a));
        current.set_angles(&angles)?;

        let f = circuit_fidelity(&current, target)?;
        out.trace.push(f);
        out.steps_used = step;
        if f > out.fidelity {
            out.fidelity = f;
            out.circuit = current.clone();
        }

        let cost = 1.0 - f;
        if (cost - prev_cost).abs() < cfg.tol {
            stalled += 1;
        } else {
            stalled = 0;
        }
        prev_cost = cost;
        if stalled >= cfg.patience || reached(f) {
            break;
        }
    }
    Ok(out)
}

/// Angle refinement schedule for two-stage episodes: refine at half the depth
/// budget and at the budget, unless the threshold is already met.
#[derive(Debug, Clone, Default)]
pub struct TwoStageHook {
    pub refine: RefineConfig,
}

impl TwoStageHook {
    pub fn new(refine: RefineConfig) -> Self {
        TwoStageHook { refine }
    }

    pub fn triggers(depth: usize, budget: usize, sfe_met: bool) -> bool {
        !sfe_met && (depth == budget / 2 || depth == budget)
    }

    /// Runs a refinement if this step is a trigger point. `epsilon` is the
    /// episode's SFE threshold.
    pub fn on_step(
        &self,
        circuit: &Circuit,
        target: &StateVector,
        depth: usize,
        budget: usize,
        epsilon: f64,
        current_fidelity: f64,
    ) -> Result<Option<RefineOutcome>> {
        if !Self::triggers(depth, budget, 1.0 - current_fidelity <= epsilon) {
            return Ok(None);
        }
        refine_angles(circuit, target, &self.refine).map(Some)
    }
}

/// Layered `Ry·Rz` rotations on every qubit followed by a linear CNOT chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnsatzSpec {
    pub n: usize,
    pub layers: usize,
}

impl AnsatzSpec {
    pub fn new(n: usize) -> Self {
        AnsatzSpec { n, layers: 2 }
    }

    pub fn param_count(&self) -> usize {
        2 * self.layers * self.n
    }

    pub fn build(&self, angles: &[f64]) -> Result<Circuit> {
        if angles.len() != self.param_count() {
            return Err(Error::domain(format!(
                "ansatz needs {} angles, got {}",
                self.param_count(),
                angles.len()
            )));
        }
        let mut c = Circuit::new(self.n);
        let mut it = angles.iter().copied();
        for _ in 0..self.layers {
            for q in 0..self.n {
                c.push(GateInstr::ry(q, it.next().unwrap()))?;
                c.push(GateInstr::rz(q, it.next().unwrap()))?;
            }
            for q in 0..self.n.saturating_sub(1) {
                c.push(GateInstr::cnot(q, q + 1))?;
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleInit {
    /// Uniform in `[−π, π]` from a per-target seed.
    Uniform,
    Zero,
}

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub init: AngleInit,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            steps: 300,
            lr: 0.1,
            seed: 0,
            init: AngleInit::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub target_id: usize,
    pub seed: u64,
    pub initial_fidelity: f64,
    pub final_fidelity: f64,
    pub steps_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub rows: Vec<BaselineRow>,
}

pub const BASELINE_CSV_HEADER: &str = "target_id,seed,initial_fidelity,final_fidelity,steps_used";

impl BaselineReport {
    pub fn mean(&self) -> f64 {
        self.rows.iter().map(|r| r.final_fidelity).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn min(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.final_fidelity)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(BASELINE_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.17e},{:.17e},{}\n",
                r.target_id, r.seed, r.initial_fidelity, r.final_fidelity, r.steps_used
            ));
        }
        s
    }
}

/// Fits a two-layer hardware-efficient ansatz to each target with Adam and
/// parameter-shift gradients.
pub fn classical_baseline(targets: &[TargetSpec], cfg: &BaselineConfig) -> Result<BaselineReport> {
    let Some(first) = targets.first() else {
        return Ok(BaselineReport { rows: Vec::new() });
    };
    let n = first.state.num_qubits();
    if targets.iter().any(|t| t.state.num_qubits() != n) {
        return Err(Error::domain("baseline targets must share a qubit count"));
    }
    let spec = AnsatzSpec::new(n);
    let refine = RefineConfig {
        max_steps: cfg.steps,
        lr: cfg.lr,
        sfe_stop: None,
        ..RefineConfig::default()
    };
    let mut rows = Vec::with_capacity(targets.len());
    for (id, target) in targets.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(id as u64);
        let angles: Vec<f64> = match cfg.init {
            AngleInit::Zero => vec![0.0; spec.param_count()],
            AngleInit::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..spec.param_count())
                    .map(|_| rng.random_range(-PI..=PI))
                    .collect()
            }
        };
        let circuit = spec.build(&angles)?;
        let outcome = refine_angles(&circuit, &target.state, &refine)?;
        rows.push(BaselineRow {
            target_id: id,
            seed,
            initial_fidelity: outcome.trace[0],
            final_fidelity: outcome.fidelity,
            steps_used: outcome.steps_used,
        });
    }
    Ok(BaselineReport { rows })
}
