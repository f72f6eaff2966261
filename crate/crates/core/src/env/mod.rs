//! The synthesis environment: an episode appends one gate per step to an
//! initially empty circuit, rewarding fidelity gains toward a target state.

mod corpus;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::refine::TwoStageHook;
use crate::sim::{fidelity, run_circuit, zero_state, Circuit, GateInstr, GateKind, StateVector};

pub use corpus::{read_corpus, write_corpus, CorpusEntry};

/// Candidate states closer than this to a visited state (in `1 − F`) are
/// rejected during target generation.
pub const OVERLAP_TOLERANCE: f64 = 0.1;
pub const MAX_REJECTIONS: usize = 1000;
const MAX_TRIVIAL_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub n: usize,
    /// Target complexity; the episode depth budget is `2·lambda`.
    pub lambda: usize,
    pub epsilon: f64,
    pub terminal_bonus: f64,
    pub reward_clip: f64,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(n: usize, lambda: usize, seed: u64) -> Self {
        EnvConfig {
            n,
            lambda,
            epsilon: 0.01,
            terminal_bonus: 1.0,
            reward_clip: 1.0,
            seed,
        }
    }

    pub fn depth_budget(&self) -> usize {
        2 * self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::sim::MAX_QUBITS).contains(&self.n) {
            return Err(Error::domain(format!("n = {} out of range", self.n)));
        }
        if self.lambda == 0 {
            return Err(Error::domain("lambda must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::domain(format!("epsilon = {} not in (0, 1)", self.epsilon)));
        }
        if !(self.reward_clip > 0.0) || !self.terminal_bonus.is_finite() {
            return Err(Error::domain("reward_clip must be positive and terminal_bonus finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub state: StateVector,
    /// Generating circuit; `None` for externally fixed targets.
    pub reference: Option<Circuit>,
    pub lambda: usize,
}

impl TargetSpec {
    pub fn fixed(state: StateVector, lambda: usize) -> Self {
        TargetSpec {
            state,
            reference: None,
            lambda,
        }
    }
}

/// True when `candidate` has fidelity above `1 − tolerance` with any state in
/// `visited`.
pub fn overlaps_visited(candidate: &StateVector, visited: &[StateVector], tolerance: f64) -> Result<bool> {
    for v in visited {
        if fidelity(candidate, v)? > 1.0 - tolerance {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Uniform draw from the agent's gate universe on `n` qubits.
pub fn random_gate(n: usize, rng: &mut impl Rng) -> GateInstr {
    let kinds = if n >= 2 { 4 } else { 3 };
    let kind = GateKind::UNIVERSE[rng.random_range(0..kinds)];
    if kind == GateKind::Cnot {
        let control = rng.random_range(0..n);
        let mut target = rng.random_range(0..n - 1);
        if target >= control {
            target += 1;
        }
        GateInstr::cnot(control, target)
    } else {
        GateInstr::rotation(kind, rng.random_range(0..n), rng.random_range(-PI..=PI))
    }
}

fn generate_once(cfg: &EnvConfig, rng: &mut impl Rng) -> Result<TargetSpec> {
    let mut reference = Circuit::new(cfg.n);
    let mut state = zero_state(cfg.n)?;
    let mut visited = vec![state.clone()];
    for _ in 0..cfg.lambda {
        let mut rejections = 0;
        loop {
            let g = random_gate(cfg.n, rng);
            let mut next = state.clone();
            next.apply(&g)?;
            if overlaps_visited(&next, &visited, OVERLAP_TOLERANCE)? {
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::Generation { rejections });
                }
                continue;
            }
            reference.push(g)?;
            visited.push(next.clone());
            state = next;
            break;
        }
    }
    Ok(TargetSpec {
        state,
        reference: Some(reference),
        lambda: cfg.lambda,
    })
}

/// Builds a target by applying `lambda` random gates to `|0…0⟩`, redrawing
/// any gate whose result revisits an earlier state of the same trajectory.
pub fn generate_target(cfg: &EnvConfig, rng: &mut impl Rng) -> Result<TargetSpec> {
    cfg.validate()?;
    let zero = zero_state(cfg.n)?;
    for _ in 0..MAX_TRIVIAL_REDRAWS {
        let t = generate_once(cfg, rng)?;
        if 1.0 - fidelity(&zero, &t.state)? > cfg.epsilon {
            return Ok(t);
        }
    }
    Err(Error::Generation {
        rejections: MAX_TRIVIAL_REDRAWS,
    })
}

/// Generates the target for a single `u64` seed.
pub fn target_from_seed(cfg: &EnvConfig, seed: u64) -> Result<TargetSpec> {
    generate_target(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `[Re(current) ‖ Im(current) ‖ Re(target) ‖ Im(target)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub vec: Vec<f64>,
}

impl Observation {
    fn block(&self, k: usize) -> &[f64] {
        let d = self.vec.len() / 4;
        &self.vec[k * d..(k + 1) * d]
    }

    fn amplitudes(&self, re: usize) -> Vec<Complex64> {
        self.block(re)
            .iter()
            .zip(self.block(re + 1))
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect()
    }

    pub fn current_amplitudes(&self) -> Vec<Complex64> {
        self.amplitudes(0)
    }

    pub fn target_amplitudes(&self) -> Vec<Complex64> {
        self.amplitudes(2)
    }
}

pub fn encode_observation(current: &StateVector, target: &StateVector) -> Result<Observation> {
    if current.num_qubits() != target.num_qubits() {
        return Err(Error::domain(format!(
            "observation of {} vs {} qubits",
            current.num_qubits(),
            target.num_qubits()
        )));
    }
    let mut vec = Vec::with_capacity(4 * current.dim());
    for s in [current, target] {
        vec.extend(s.amps().iter().map(|a| a.re));
        vec.extend(s.amps().iter().map(|a| a.im));
    }
    Ok(Observation { vec })
}

/// One decision of the agent. `q2` is read only for CNOT and `theta_unit`
/// only for rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentAction {
    pub gate: GateKind,
    pub q1: usize,
    pub q2: usize,
    pub theta_unit: f64,
}

/// `θ = 2π·θ̃ − π`.
pub fn unit_to_angle(theta_unit: f64) -> f64 {
    2.0 * PI * theta_unit - PI
}

/// Turns an agent decision into a gate. For CNOT, `q1` is the control and
/// `q2` the target.
pub fn decode_action(a: &AgentAction, n: usize) -> Result<GateInstr> {
    if !GateKind::UNIVERSE.contains(&a.gate) {
        return Err(Error::domain(format!("{} is not in the agent's gate set", a.gate)));
    }
    let g = if a.gate == GateKind::Cnot {
        if a.q1 == a.q2 {
            return Err(Error::domain(format!("CNOT control and target both {}", a.q1)));
        }
        GateInstr::cnot(a.q1, a.q2)
    } else {
        if !(0.0..=1.0).contains(&a.theta_unit) {
            return Err(Error::domain(format!("theta_unit {} outside [0, 1]", a.theta_unit)));
        }
        GateInstr::rotation(a.gate, a.q1, unit_to_angle(a.theta_unit))
    };
    g.validate(n)?;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub fidelity: f64,
    pub depth: usize,
    pub sfe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Reconstructed circuit depth as a percentage of the target depth.
pub fn rcd(synth_gate_count: usize, lambda: usize) -> f64 {
    100.0 * synth_gate_count as f64 / lambda as f64
}

/// Where episode targets come from.
#[derive(Debug, Clone)]
pub enum TargetSource {
    /// A fresh procedurally generated target per episode.
    Generated,
    /// The same state every episode.
    Fixed(StateVector),
    /// Cycles through a fixed list.
    Cycle(Vec<TargetSpec>),
}

/// Single-threaded environment instance owning its RNG.
#[derive(Debug, Clone)]
pub struct SynthesisEnv {
    cfg: EnvConfig,
    source: TargetSource,
    rng: ChaCha8Rng,
    cycle_pos: usize,
    two_stage: Option<TwoStageHook>,
    target: Option<TargetSpec>,
    target_seed: Option<u64>,
    circuit: Circuit,
    state: StateVector,
    fidelity: f64,
    done: bool,
    refinements: usize,
}

impl SynthesisEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        Self::with_source(cfg, TargetSource::Generated)
    }

    pub fn with_source(cfg: EnvConfig, source: TargetSource) -> Result<Self> {
        cfg.validate()?;
        let check = |s: &StateVector| {
            if s.num_qubits() == cfg.n {
                Ok(())
            } else {
                Err(Error::domain("target qubit count differs from the environment"))
            }
        };
        match &source {
            TargetSource::Generated => {}
            TargetSource::Fixed(s) => check(s)?,
            TargetSource::Cycle(ts) => {
                if ts.is_empty() {
                    return Err(Error::domain("empty target cycle"));
                }
                ts.iter().try_for_each(|t| check(&t.state))?
            }
        }
        Ok(SynthesisEnv {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            circuit: Circuit::new(cfg.n),
            state: zero_state(cfg.n)?,
            cfg,
            source,
            cycle_pos: 0,
            two_stage: None,
            target: None,
            target_seed: None,
            fidelity: 0.0,
            done: true,
            refinements: 0,
        })
    }

    /// Switches to two-stage mode: rotation angles chosen by the agent are
    /// replaced by 0 and `hook` refines them at its trigger points.
    pub fn with_two_stage(mut self, hook: TwoStageHook) -> Self {
        self.two_stage = Some(hook);
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn is_two_stage(&self) -> bool {
        self.two_stage.is_some()
    }

    pub fn target(&self) -> Option<&TargetSpec> {
        self.target.as_ref()
    }

    /// Seed of the current generated target, if any.
    pub fn target_seed(&self) -> Option<u64> {
        self.target_seed
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of angle refinements run since construction.
    pub fn refinements(&self) -> usize {
        self.refinements
    }

    pub fn observation(&self) -> Result<Observation> {
        let target = self
            .target
            .as_ref()
            .ok_or_else(|| Error::State("environment not reset".into()))?;
        encode_observation(&self.state, &target.state)
    }

    fn next_target(&mut self) -> Result<TargetSpec> {
        self.target_seed = None;
        match &self.source {
            TargetSource::Generated => {
                let seed = self.rng.next_u64();
                self.target_seed = Some(seed);
                target_from_seed(&self.cfg, seed)
            }
            TargetSource::Fixed(s) => Ok(TargetSpec::fixed(s.clone(), self.cfg.lambda)),
            TargetSource::Cycle(ts) => {
                let t = ts[self.cycle_pos % ts.len()].clone();
                self.cycle_pos += 1;
                Ok(t)
            }
        }
    }

    /// Starts a new episode from `|0…0⟩`.
    pub fn reset(&mut self) -> Result<(Observation, TargetSpec)> {
        let target = self.next_target()?;
        self.circuit = Circuit::new(self.cfg.n);
        self.state = zero_state(self.cfg.n)?;
        self.fidelity = fidelity(&self.state, &target.state)?;
        self.done = false;
        let obs = encode_observation(&self.state, &target.state)?;
        self.target = Some(target.clone());
        Ok((obs, target))
    }

    pub fn step(&mut self, action: &AgentAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::State("step called on a finished episode".into()));
        }
        let target = self.target.as_ref().expect("active episode has a target");
        let mut gate = decode_action(action, self.cfg.n)?;
        if self.two_stage.is_some() && gate.kind.is_rotation() {
            gate.angle = Some(0.0);
        }
        self.circuit.push(gate)?;
        self.state.apply(&gate)?;
        let depth = self.circuit.gate_count();
        let budget = self.cfg.depth_budget();
        let mut f = fidelity(&target.state, &self.state)?;

        if let Some(hook) = &self.two_stage {
            if let Some(out) = hook.on_step(&self.circuit, &target.state, depth, budget, self.cfg.epsilon, f)? {
                self.refinements += 1;
                if out.fidelity > f {
                    self.circuit = out.circuit;
                    self.state = run_circuit(&self.circuit)?;
                    f = fidelity(&target.state, &self.state)?;
                }
            }
        }

        let sfe = 1.0 - f;
        let terminated = sfe <= self.cfg.epsilon;
        let truncated = !terminated && depth >= budget;
        let clip = self.cfg.reward_clip;
        let mut reward = (f - self.fidelity).clamp(-clip, clip);
        if terminated {
            reward += self.cfg.terminal_bonus;
        }
        self.fidelity = f;
        self.done = terminated || truncated;
        Ok(StepResult {
            obs: encode_observation(&self.state, &target.state)?,
            reward,
            terminated,
            truncated,
            info: StepInfo {
                fidelity: f,
                depth,
                sfe,
            },
        })
    }
}
