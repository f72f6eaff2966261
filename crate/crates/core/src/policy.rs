//! Actor-critic MLP for the mixed discrete/continuous action.
//!
//! A shared two-layer tanh trunk feeds linear heads for the gate (4 logits),
//! the first qubit (`n` logits), the second qubit (`n` logits, masked at the
//! first), the angle mean and the state value. The angle log-std is a single
//! learnable scalar. Angles are sampled as `θ̃ = sigmoid(z)`,
//! `z ~ N(μ, σ²)`, and the log-density includes the sigmoid Jacobian.
//!
//! Gradients are computed by hand; the finite-difference checks in the tests
//! are what keep them honest.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{AgentAction, Observation};
use crate::error::{Error, Result};
use crate::sim::GateKind;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// `θ̃` is clamped to `[THETA_EPS, 1 − THETA_EPS]` before the inverse sigmoid.
pub const THETA_EPS: f64 = 1e-6;
const GATES: usize = 4;
const CNOT_INDEX: usize = 3;
const CHECKPOINT_MAGIC: &str = "qsynth-policy v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub n: usize,
    pub hidden: usize,
    /// When false (two-stage mode) rotations carry no sampled angle.
    pub angle_head: bool,
}

impl PolicyShape {
    pub fn new(n: usize) -> Self {
        PolicyShape {
            n,
            hidden: 64,
            angle_head: true,
        }
    }

    pub fn obs_dim(&self) -> usize {
        4 << self.n
    }

    fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    h: usize,
    n: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wg: usize,
    bg: usize,
    wq1: usize,
    bq1: usize,
    wq2: usize,
    bq2: usize,
    wmu: usize,
    bmu: usize,
    wv: usize,
    bv: usize,
    log_std: usize,
    total: usize,
}

impl Layout {
    fn new(s: &PolicyShape) -> Self {
        let (d, h, n) = (s.obs_dim(), s.hidden, s.n);
        let mut at = 0;
        let mut take = |len: usize| {
            let o = at;
            at += len;
            o
        };
        let w1 = take(h * d);
        let b1 = take(h);
        let w2 = take(h * h);
        let b2 = take(h);
        let wg = take(GATES * h);
        let bg = take(GATES);
        let wq1 = take(n * h);
        let bq1 = take(n);
        let wq2 = take(n * h);
        let bq2 = take(n);
        let wmu = take(h);
        let bmu = take(1);
        let wv = take(h);
        let bv = take(1);
        let log_std = take(1);
        Layout {
            d,
            h,
            n,
            w1,
            b1,
            w2,
            b2,
            wg,
            bg,
            wq1,
            bq1,
            wq2,
            bq2,
            wmu,
            bmu,
            wv,
            bv,
            log_std,
            total: at,
        }
    }

    /// `(name, offset, rows, cols)` for every tensor, in storage order.
    fn tensors(&self) -> [(&'static str, usize, usize, usize); 15] {
        let (d, h, n) = (self.d, self.h, self.n);
        [
            ("trunk1.weight", self.w1, h, d),
            ("trunk1.bias", self.b1, h, 1),
            ("trunk2.weight", self.w2, h, h),
            ("trunk2.bias", self.b2, h, 1),
            ("gate.weight", self.wg, GATES, h),
            ("gate.bias", self.bg, GATES, 1),
            ("q1.weight", self.wq1, n, h),
            ("q1.bias", self.bq1, n, 1),
            ("q2.weight", self.wq2, n, h),
            ("q2.bias", self.bq2, n, 1),
            ("angle_mean.weight", self.wmu, 1, h),
            ("angle_mean.bias", self.bmu, 1, 1),
            ("value.weight", self.wv, 1, h),
            ("value.bias", self.bv, 1, 1),
            ("angle_log_std", self.log_std, 1, 1),
        ]
    }
}

/// Flat parameter vector plus its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

/// Gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub data: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(shape: &PolicyShape) -> Self {
        ParamGrads {
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|g| *g *= k);
    }
}

/// Raw head outputs for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub gate_logits: [f64; GATES],
    pub q1_logits: Vec<f64>,
    pub q2_logits: Vec<f64>,
    pub angle_mean: f64,
    pub angle_log_std: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub action: AgentAction,
    pub log_prob: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Coefficients of `c1·log π(a|x) + c2·V(x) + c3·H(x)`, the scalar that
/// [`PolicyParams::backward`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossCoefficients {
    pub log_prob: f64,
    pub value: f64,
    pub entropy: f64,
}

struct Cache {
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: PolicyOutput,
    log_std_clamped: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Probabilities and log-probabilities of `softmax(logits)` restricted to
/// `allowed`; disallowed entries get probability 0.
fn masked_softmax(logits: &[f64], allowed: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<f64>) {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, l)| (l - max).exp())
        .sum();
    let lse = max + sum.ln();
    let mut p = vec![0.0; logits.len()];
    let mut lp = vec![f64::NEG_INFINITY; logits.len()];
    for (i, l) in logits.iter().enumerate() {
        if allowed(i) {
            lp[i] = l - lse;
            p[i] = lp[i].exp();
        }
    }
    (p, lp)
}

/// Entropy of a categorical and its gradient w.r.t. the logits.
fn categorical_entropy(p: &[f64], lp: &[f64]) -> (f64, Vec<f64>) {
    let h: f64 = -p
        .iter()
        .zip(lp)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, l)| pi * l)
        .sum::<f64>();
    let grad = p
        .iter()
        .zip(lp)
        .map(|(pi, l)| if *pi > 0.0 { -pi * (l + h) } else { 0.0 })
        .collect();
    (h, grad)
}

fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, pi) in p.iter().enumerate() {
        if *pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
        .0
}

fn gate_index(kind: GateKind) -> Result<usize> {
    GateKind::UNIVERSE
        .iter()
        .position(|k| *k == kind)
        .ok_or_else(|| Error::domain(format!("{kind} is not a policy gate")))
}

/// Orthogonal matrix (rows × cols) scaled by `gain`, via Gram-Schmidt on a
/// Gaussian draw.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (k, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while vs.len() < k {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vs.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = gain * if rows <= cols { vs[r][c] } else { vs[c][r] };
        }
    }
    m
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams {
            data: vec![0.0; shape.param_count()],
            shape,
        }
    }

    /// Orthogonal trunk (gain √2), near-uniform policy heads (gain 0.01),
    /// unit-gain value head, zero biases, `log σ = 0`.
    pub fn init(shape: PolicyShape, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        let l = shape.layout();
        let (d, h, n) = (l.d, l.h, l.n);
        let sqrt2 = 2f64.sqrt();
        let blocks = [
            (l.w1, h, d, sqrt2),
            (l.w2, h, h, sqrt2),
            (l.wg, GATES, h, 0.01),
            (l.wq1, n, h, 0.01),
            (l.wq2, n, h, 0.01),
            (l.wmu, 1, h, 0.01),
            (l.wv, 1, h, 1.0),
        ];
        for (off, rows, cols, gain) in blocks {
            let m = orthogonal(rows, cols, gain, rng);
            p.data[off..off + rows * cols].copy_from_slice(&m);
        }
        p
    }

    pub fn from_data(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.param_count() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                data.len()
            )));
        }
        Ok(PolicyParams { shape, data })
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Keeps the stored log-std within its allowed range.
    pub fn clamp_log_std(&mut self) {
        let i = self.shape.layout().log_std;
        self.data[i] = self.data[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
    }

    fn gate_allowed(&self) -> impl Fn(usize) -> bool {
        let n = self.shape.n;
        move |i| i != CNOT_INDEX || n >= 2
    }

    fn run(&self, obs: &[f64]) -> Result<Cache> {
        let l = self.shape.layout();
        if obs.len() != l.d {
            return Err(Error::domain(format!(
                "observation length {} but the policy expects {}",
                obs.len(),
                l.d
            )));
        }
        let w = &self.data;
        let dense = |x: &[f64], wo: usize, bo: usize, rows: usize| -> Vec<f64> {
            let cols = x.len();
            (0..rows)
                .map(|r| {
                    let row = &w[wo + r * cols..wo + (r + 1) * cols];
                    w[bo + r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };
        let h1: Vec<f64> = dense(obs, l.w1, l.b1, l.h).into_iter().map(f64::tanh).collect();
        let h2: Vec<f64> = dense(&h1, l.w2, l.b2, l.h).into_iter().map(f64::tanh).collect();
        let g = dense(&h2, l.wg, l.bg, GATES);
        let raw_log_std = w[l.log_std];
        let out = PolicyOutput {
            gate_logits: [g[0], g[1], g[2], g[3]],
            q1_logits: dense(&h2, l.wq1, l.bq1, l.n),
            q2_logits: dense(&h2, l.wq2, l.bq2, l.n),
            angle_mean: dense(&h2, l.wmu, l.bmu, 1)[0],
            angle_log_std: raw_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
            value: dense(&h2, l.wv, l.bv, 1)[0],
        };
        let finite = out.gate_logits.iter().chain(&out.q1_logits).chain(&out.q2_logits).all(|x| x.is_finite())
            && out.angle_mean.is_finite()
            && out.value.is_finite();
        if !finite {
            return Err(Error::NonFinite("policy forward pass".into()));
        }
        Ok(Cache {
            h1,
            h2,
            out,
            log_std_clamped: !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_log_std),
        })
    }

    pub fn forward(&self, obs: &Observation) -> Result<PolicyOutput> {
        Ok(self.run(&obs.vec)?.out)
    }

    /// Draws an action. RNG draws happen in the order gate, q1, q2 (CNOT
    /// only), angle (rotations only).
    pub fn sample(&self, obs: &Observation, rng: &mut impl Rng) -> Result<SampledAction> {
        let out = self.run(&obs.vec)?.out;
        let (pg, _) = masked_softmax(&out.gate_logits, self.gate_allowed());
        let gate = GateKind::UNIVERSE[sample_categorical(&pg, rng)];
        let (pq1, _) = masked_softmax(&out.q1_logits, |_| true);
        let q1 = sample_categorical(&pq1, rng);
        let q2 = if gate == GateKind::Cnot {
            let (pq2, _) = masked_softmax(&out.q2_logits, |i| i != q1);
            sample_categorical(&pq2, rng)
        } else {
            q1
        };
        let theta_unit = if gate.is_rotation() && self.shape.angle_head {
            let z: f64 = StandardNormal.sample(rng);
            sigmoid(out.angle_mean + out.angle_log_std.exp() * z).clamp(THETA_EPS, 1.0 - THETA_EPS)
        } else {
            0.5
        };
        let action = AgentAction {
            gate,
            q1,
            q2,
            theta_unit,
        };
        let e = self.log_prob_entropy(obs, &action)?;
        Ok(SampledAction {
            action,
            log_prob: e.log_prob,
            value: e.value,
            entropy: e.entropy,
        })
    }

    /// Mode of every head: argmax categoricals and `θ̃ = sigmoid(μ)`.
    pub fn act_deterministic(&self, obs: &Observation) -> Result<AgentAction> {
        let out = self.run(&obs.vec)?.out;
        let (pg, _) = masked_softmax(&out.gate_logits, self.gate_allowed());
        let gate = GateKind::UNIVERSE[argmax(&pg)];
        let (pq1, _) = masked_softmax(&out.q1_logits, |_| true);
        let q1 = argmax(&pq1);
        let q2 = if gate == GateKind::Cnot {
            let (pq2, _) = masked_softmax(&out.q2_logits, |i| i != q1);
            argmax(&pq2)
        } else {
            q1
        };
        let theta_unit = if gate.is_rotation() && self.shape.angle_head {
            sigmoid(out.angle_mean).clamp(THETA_EPS, 1.0 - THETA_EPS)
        } else {
            0.5
        };
        Ok(AgentAction {
            gate,
            q1,
            q2,
            theta_unit,
        })
    }

    pub fn log_prob_entropy(&self, obs: &Observation, action: &AgentAction) -> Result<Evaluation> {
        let cache = self.run(&obs.vec)?;
        Ok(self.head_terms(&cache.out, action)?.eval)
    }

    /// Gradient of `c1·log π + c2·V + c3·H` at `(obs, action)`.
    pub fn backward(&self, obs: &Observation, action: &AgentAction, coeffs: LossCoefficients) -> Result<ParamGrads> {
        let mut g = ParamGrads::zeros(&self.shape);
        self.accumulate(&obs.vec, action, |_| coeffs, &mut g)?;
        Ok(g)
    }

    /// Adds the gradient into `grads`; `coeffs` may depend on the forward
    /// evaluation (PPO ratios do). Returns that evaluation.
    pub fn accumulate(
        &self,
        obs: &[f64],
        action: &AgentAction,
        coeffs: impl FnOnce(&Evaluation) -> LossCoefficients,
        grads: &mut ParamGrads,
    ) -> Result<Evaluation> {
        let cache = self.run(obs)?;
        let terms = self.head_terms(&cache.out, action)?;
        let c = coeffs(&terms.eval);
        let l = self.shape.layout();
        let g = &mut grads.data;
        let w = &self.data;

        let d_gate: Vec<f64> = (0..GATES)
            .map(|j| c.log_prob * terms.dlp_gate[j] + c.entropy * terms.dh_gate[j])
            .collect();
        let d_q1: Vec<f64> = (0..l.n)
            .map(|j| c.log_prob * terms.dlp_q1[j] + c.entropy * terms.dh_q1[j])
            .collect();
        let d_q2: Vec<f64> = (0..l.n)
            .map(|j| c.log_prob * terms.dlp_q2[j] + c.entropy * terms.dh_q2[j])
            .collect();
        let d_mu = c.log_prob * terms.dlp_mu;
        let d_value = c.value;
        if !cache.log_std_clamped {
            g[l.log_std] += c.log_prob * terms.dlp_log_std + c.entropy * terms.dh_log_std;
        }

        let h = l.h;
        let mut dh2 = vec![0.0; h];
        let mut head = |wo: usize, bo: usize, dout: &[f64], dh2: &mut [f64]| {
            for (r, d) in dout.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g[bo + r] += d;
                for k in 0..h {
                    g[wo + r * h + k] += d * cache.h2[k];
                    dh2[k] += d * w[wo + r * h + k];
                }
            }
        };
        head(l.wg, l.bg, &d_gate, &mut dh2);
        head(l.wq1, l.bq1, &d_q1, &mut dh2);
        head(l.wq2, l.bq2, &d_q2, &mut dh2);
        head(l.wmu, l.bmu, &[d_mu], &mut dh2);
        head(l.wv, l.bv, &[d_value], &mut dh2);

        let dz2: Vec<f64> = dh2.iter().zip(&cache.h2).map(|(d, y)| d * (1.0 - y * y)).collect();
        let mut dh1 = vec![0.0; h];
        for (r, d) in dz2.iter().enumerate() {
            g[l.b2 + r] += d;
            for k in 0..h {
                g[l.w2 + r * h + k] += d * cache.h1[k];
                dh1[k] += d * w[l.w2 + r * h + k];
            }
        }
        let dz1: Vec<f64> = dh1.iter().zip(&cache.h1).map(|(d, y)| d * (1.0 - y * y)).collect();
        for (r, d) in dz1.iter().enumerate() {
            g[l.b1 + r] += d;
            let row = &mut g[l.w1 + r * l.d..l.w1 + (r + 1) * l.d];
            row.iter_mut().zip(obs).for_each(|(gw, x)| *gw += d * x);
        }
        Ok(terms.eval)
    }

    fn head_terms(&self, out: &PolicyOutput, a: &AgentAction) -> Result<HeadTerms> {
        let n = self.shape.n;
        let gi = gate_index(a.gate)?;
        if !self.gate_allowed()(gi) {
            return Err(Error::domain("CNOT needs at least two qubits"));
        }
        if a.q1 >= n || (a.gate == GateKind::Cnot && (a.q2 >= n || a.q2 == a.q1)) {
            return Err(Error::domain(format!("invalid qubits ({}, {}) for n = {n}", a.q1, a.q2)));
        }
        let mut t = HeadTerms::zeros(n);

        let (pg, lpg) = masked_softmax(&out.gate_logits, self.gate_allowed());
        let (hg, dhg) = categorical_entropy(&pg, &lpg);
        let mut log_prob = lpg[gi];
        let mut entropy = hg;
        for j in 0..GATES {
            t.dlp_gate[j] = f64::from(u8::from(j == gi)) - pg[j];
        }
        t.dh_gate.copy_from_slice(&dhg);

        let (pq1, lpq1) = masked_softmax(&out.q1_logits, |_| true);
        let (hq1, dhq1) = categorical_entropy(&pq1, &lpq1);
        log_prob += lpq1[a.q1];
        entropy += hq1;
        for j in 0..n {
            t.dlp_q1[j] = f64::from(u8::from(j == a.q1)) - pq1[j];
        }
        t.dh_q1 = dhq1;

        if a.gate == GateKind::Cnot {
            let (pq2, lpq2) = masked_softmax(&out.q2_logits, |i| i != a.q1);
            let (hq2, dhq2) = categorical_entropy(&pq2, &lpq2);
            log_prob += lpq2[a.q2];
            entropy += hq2;
            for j in 0..n {
                if j != a.q1 {
                    t.dlp_q2[j] = f64::from(u8::from(j == a.q2)) - pq2[j];
                }
            }
            t.dh_q2 = dhq2;
        } else if self.shape.angle_head {
            let u = a.theta_unit.clamp(THETA_EPS, 1.0 - THETA_EPS);
            let z = (u / (1.0 - u)).ln();
            let ls = out.angle_log_std;
            let sigma = ls.exp();
            let s = (z - out.angle_mean) / sigma;
            log_prob += -0.5 * s * s - ls - 0.5 * (2.0 * PI).ln() - (u * (1.0 - u)).ln();
            entropy += 0.5 + 0.5 * (2.0 * PI).ln() + ls;
            t.dlp_mu = s / sigma;
            t.dlp_log_std = s * s - 1.0;
            t.dh_log_std = 1.0;
        }

        t.eval = Evaluation {
            log_prob,
            entropy,
            value: out.value,
        };
        if !log_prob.is_finite() {
            return Err(Error::NonFinite("action log-probability".into()));
        }
        Ok(t)
    }

    /// Text checkpoint: a magic line, the shape, then one `name rows cols`
    /// header and one line of values per tensor. Values use Rust's
    /// shortest round-trip float formatting, so loading is bit-exact.
    pub fn to_checkpoint(&self) -> String {
        let s = &self.shape;
        let mut out = format!(
            "{CHECKPOINT_MAGIC}\nn {} hidden {} angle_head {}\n",
            s.n,
            s.hidden,
            u8::from(s.angle_head)
        );
        for (name, off, rows, cols) in s.layout().tensors() {
            let _ = writeln!(out, "{name} {rows} {cols}");
            let vals: Vec<String> = self.data[off..off + rows * cols].iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("checkpoint truncated before {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::parse(ln, format!("unknown checkpoint header `{magic}`")));
        }
        let (ln, shape_line) = next("shape")?;
        let f: Vec<&str> = shape_line.split_whitespace().collect();
        let shape = match f.as_slice() {
            ["n", n, "hidden", h, "angle_head", a] => {
                let p = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(ln, e.to_string()));
                PolicyShape {
                    n: p(n)?,
                    hidden: p(h)?,
                    angle_head: p(a)? != 0,
                }
            }
            _ => return Err(Error::parse(ln, "malformed shape line")),
        };
        let mut data = vec![0.0; shape.param_count()];
        for (name, off, rows, cols) in shape.layout().tensors() {
            let (ln, header) = next(name)?;
            if header != format!("{name} {rows} {cols}") {
                return Err(Error::parse(ln, format!("expected `{name} {rows} {cols}`, found `{header}`")));
            }
            let (ln, values) = next(name)?;
            let vals: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::parse(ln, e.to_string())))
                .collect::<Result<_>>()?;
            if vals.len() != rows * cols {
                return Err(Error::parse(ln, format!("{name}: expected {} values, found {}", rows * cols, vals.len())));
            }
            data[off..off + vals.len()].copy_from_slice(&vals);
        }
        PolicyParams::from_data(shape, data)
    }
}

struct HeadTerms {
    eval: Evaluation,
    dlp_gate: [f64; GATES],
    dh_gate: [f64; GATES],
    dlp_q1: Vec<f64>,
    dh_q1: Vec<f64>,
    dlp_q2: Vec<f64>,
    dh_q2: Vec<f64>,
    dlp_mu: f64,
    dlp_log_std: f64,
    dh_log_std: f64,
}

impl HeadTerms {
    fn zeros(n: usize) -> Self {
        HeadTerms {
            eval: Evaluation {
                log_prob: 0.0,
                entropy: 0.0,
                value: 0.0,
            },
            dlp_gate: [0.0; GATES],
            dh_gate: [0.0; GATES],
            dlp_q1: vec![0.0; n],
            dh_q1: vec![0.0; n],
            dlp_q2: vec![0.0; n],
            dh_q2: vec![0.0; n],
            dlp_mu: 0.0,
            dlp_log_std: 0.0,
            dh_log_std: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::encode_observation;
    use crate::sim::{run_circuit, zero_state, Circuit, GateInstr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs2() -> Observation {
        let c = Circuit::from_gates(2, vec![GateInstr::ry(0, 0.4), GateInstr::rz(1, 1.1)]).unwrap();
        encode_observation(&run_circuit(&c).unwrap(), &zero_state(2).unwrap()).unwrap()
    }

    fn random_params(shape: PolicyShape, rng: &mut ChaCha8Rng) -> PolicyParams {
        let data = (0..shape.param_count())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let mut p = PolicyParams::from_data(shape, data).unwrap();
        let i = shape.layout().log_std;
        p.data[i] = rng.random_range(-1.0..0.5);
        p
    }

    #[test]
    fn zero_weights_give_uniform_heads() {
        let p = PolicyParams::zeros(PolicyShape::new(2));
        let out = p.forward(&obs2()).unwrap();
        assert_eq!(out.gate_logits, [0.0; 4]);
        assert_eq!(out.q1_logits, vec![0.0; 2]);
        assert_eq!(out.angle_mean, 0.0);
        assert_eq!(out.value, 0.0);
        assert_eq!(p.forward(&obs2()).unwrap(), out);
    }

    #[test]
    fn wrong_observation_length() {
        let p = PolicyParams::zeros(PolicyShape::new(3));
        assert!(matches!(p.forward(&obs2()), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_log_prob_and_entropy_terms() {
        let p = PolicyParams::zeros(PolicyShape::new(2));
        let a = AgentAction { gate: GateKind::Cnot, q1: 1, q2: 0, theta_unit: 0.3 };
        let e = p.log_prob_entropy(&obs2(), &a).unwrap();
        // q2 is forced once q1 is masked out.
        assert!((e.log_prob - (0.25f64.ln() + 0.5f64.ln())).abs() < 1e-12);
        assert!((e.entropy - (4f64.ln() + 2f64.ln())).abs() < 1e-12);

        let r = AgentAction { gate: GateKind::Rx, q1: 0, q2: 0, theta_unit: 0.5 };
        let e = p.log_prob_entropy(&obs2(), &r).unwrap();
        let gauss = -0.5 * (2.0 * PI).ln() - 0.25f64.ln();
        assert!((e.log_prob - (0.25f64.ln() + 0.5f64.ln() + gauss)).abs() < 1e-12);
    }

    #[test]
    fn cnot_mask_puts_all_mass_elsewhere() {
        let p = PolicyParams::zeros(PolicyShape::new(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = 0;
        for _ in 0..200 {
            let s = p.sample(&obs2(), &mut rng).unwrap();
            if s.action.gate == GateKind::Cnot {
                assert_ne!(s.action.q1, s.action.q2);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn single_qubit_policy_never_emits_cnot() {
        let p = PolicyParams::zeros(PolicyShape::new(1));
        let o = encode_observation(&zero_state(1).unwrap(), &zero_state(1).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert_ne!(p.sample(&o, &mut rng).unwrap().action.gate, GateKind::Cnot);
        }
        let e = p.log_prob_entropy(&o, &AgentAction { gate: GateKind::Ry, q1: 0, q2: 0, theta_unit: 0.5 }).unwrap();
        assert!(e.log_prob.is_finite());
    }

    #[test]
    fn sample_is_consistent_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = PolicyParams::init(PolicyShape::new(2), &mut rng);
        let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(5), ChaCha8Rng::seed_from_u64(5));
        for _ in 0..100 {
            let s = p.sample(&obs2(), &mut r1).unwrap();
            assert_eq!(s, p.sample(&obs2(), &mut r2).unwrap());
            let e = p.log_prob_entropy(&obs2(), &s.action).unwrap();
            assert!((e.log_prob - s.log_prob).abs() < 1e-9);
        }
    }

    #[test]
    fn narrow_angle_concentrates_at_sigmoid_mean() {
        let shape = PolicyShape::new(2);
        let mut p = PolicyParams::zeros(shape);
        let l = shape.layout();
        p.data[l.bmu] = 0.8;
        p.data[l.log_std] = -4.0;
        // Force rotations: Ry logit dominates.
        p.data[l.bg + 1] = 30.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..10_000).map(|_| p.sample(&obs2(), &mut rng).unwrap().action.theta_unit).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let sem = (var / draws.len() as f64).sqrt();
        // E[sigmoid(z)] differs from sigmoid(μ) only at second order in σ.
        let target = sigmoid(0.8);
        let bias = 0.5 * (-4.0f64).exp().powi(2) * target * (1.0 - target) * (1.0 - 2.0 * target);
        assert!((mean - target - bias).abs() < 3.0 * sem + 1e-12, "{mean} vs {target}");
    }

    #[test]
    fn zero_coefficients_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(PolicyShape::new(2), &mut rng);
        let a = AgentAction { gate: GateKind::Ry, q1: 1, q2: 1, theta_unit: 0.3 };
        let g = p.backward(&obs2(), &a, LossCoefficients::default()).unwrap();
        assert!(g.data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn q2_head_untouched_by_rotation_actions() {
        let shape = PolicyShape::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(shape, &mut rng);
        let o = encode_observation(&zero_state(3).unwrap(), &zero_state(3).unwrap()).unwrap();
        let a = AgentAction { gate: GateKind::Rz, q1: 2, q2: 2, theta_unit: 0.6 };
        let coeffs = LossCoefficients { log_prob: 1.0, value: 0.7, entropy: -0.3 };
        let g = p.backward(&o, &a, coeffs).unwrap();
        let l = shape.layout();
        assert!(g.data[l.wq2..l.bq2 + l.n].iter().all(|x| *x == 0.0));
    }

    fn objective(p: &PolicyParams, o: &Observation, a: &AgentAction, c: LossCoefficients) -> f64 {
        let e = p.log_prob_entropy(o, a).unwrap();
        c.log_prob * e.log_prob + c.value * e.value + c.entropy * e.entropy
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let shape = PolicyShape { n: 2, hidden: 8, angle_head: true };
        for case in 0..6 {
            let p = random_params(shape, &mut rng);
            let o = obs2();
            let gate = GateKind::UNIVERSE[case % 4];
            let a = AgentAction { gate, q1: case % 2, q2: 1 - case % 2, theta_unit: rng.random_range(0.05..0.95) };
            let c = LossCoefficients {
                log_prob: rng.random_range(-1.0..1.0),
                value: rng.random_range(-1.0..1.0),
                entropy: rng.random_range(-1.0..1.0),
            };
            let g = p.backward(&o, &a, c).unwrap();
            let h = 1e-5;
            for i in 0..p.data.len() {
                let mut plus = p.clone();
                plus.data[i] += h;
                let mut minus = p.clone();
                minus.data[i] -= h;
                let fd = (objective(&plus, &o, &a, c) - objective(&minus, &o, &a, c)) / (2.0 * h);
                let err = (fd - g.data[i]).abs();
                assert!(err <= 1e-4 * fd.abs().max(g.data[i].abs()) || err < 1e-8, "case {case} param {i}: {fd} vs {}", g.data[i]);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PolicyParams::init(PolicyShape::new(3), &mut rng);
        let back = PolicyParams::from_checkpoint(&p.to_checkpoint()).unwrap();
        assert_eq!(back.shape, p.shape);
        assert!(back.data.iter().zip(&p.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(PolicyParams::from_checkpoint("garbage").is_err());
        let truncated: String = p.to_checkpoint().lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(PolicyParams::from_checkpoint(&truncated).is_err());
    }

    #[test]
    fn init_heads_are_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = PolicyParams::init(PolicyShape::new(2), &mut rng);
        let out = p.forward(&obs2()).unwrap();
        let (pg, _) = masked_softmax(&out.gate_logits, |_| true);
        assert!(pg.iter().all(|x| (x - 0.25).abs() < 0.02));
        let l = p.shape.layout();
        let row0 = &p.data[l.w2..l.w2 + 64];
        let row1 = &p.data[l.w2 + 64..l.w2 + 128];
        let dot: f64 = row0.iter().zip(row1).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-10);
    }
}
