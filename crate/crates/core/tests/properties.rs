use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use qsynth_core::env::{
    encode_observation, target_from_seed, unit_to_angle, AgentAction, EnvConfig, SynthesisEnv,
};
use qsynth_core::policy::{PolicyParams, PolicyShape};
use qsynth_core::refine::{refine_angles, RefineConfig};
use qsynth_core::sim::dense::apply_dense;
use qsynth_core::sim::{
    apply_gate, circuit_fidelity, fidelity, fidelity_gradient, gate_matrix, run_circuit, Circuit, GateInstr,
    GateKind, StateVector,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gate(n: usize) -> impl Strategy<Value = GateInstr> {
    let kinds = prop::sample::select(GateKind::ALL.to_vec());
    (kinds, 0..n, 0..n, -PI..PI).prop_filter_map("CNOT needs two qubits", move |(k, a, b, t)| match k {
        GateKind::Cnot if n < 2 => None,
        GateKind::Cnot => Some(GateInstr::cnot(a, if a == b { (b + 1) % n } else { b })),
        k if k.is_rotation() => Some(GateInstr::rotation(k, a, t)),
        k => Some(GateInstr::fixed(k, a)),
    })
}

fn circuit(max_n: usize, max_len: usize) -> impl Strategy<Value = Circuit> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(gate(n), 0..=max_len).prop_map(move |g| Circuit::from_gates(n, g).unwrap())
    })
}

fn state(n: usize) -> impl Strategy<Value = StateVector> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1 << n)
        .prop_filter_map("nonzero", |v| {
            StateVector::normalized(v.into_iter().map(|(r, i)| Complex64::new(r, i)).collect()).ok()
        })
}

fn circuit_and_target(max_n: usize, max_len: usize) -> impl Strategy<Value = (Circuit, StateVector)> {
    circuit(max_n, max_len).prop_flat_map(|c| {
        let n = c.num_qubits();
        (Just(c), state(n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gates_are_unitary(k in prop::sample::select(GateKind::ALL.to_vec()), t in -10.0..10.0f64) {
        let angle = k.is_rotation().then_some(t);
        prop_assert!(gate_matrix(k, angle).unwrap().unitarity_error() < 1e-12);
    }

    #[test]
    fn norm_preserved(c in circuit(5, 50)) {
        let s = run_circuit(&c).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cnot_is_involution(s in (2..=4usize).prop_flat_map(state), a in 0..4usize, b in 0..4usize) {
        let n = s.num_qubits();
        let (a, b) = (a % n, b % n);
        prop_assume!(a != b);
        let g = GateInstr::cnot(a, b);
        let back = apply_gate(&apply_gate(&s, &g).unwrap(), &g).unwrap();
        for (x, y) in back.amps().iter().zip(s.amps()) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn rotations_compose(
        k in prop::sample::select(vec![GateKind::Rx, GateKind::Ry, GateKind::Rz]),
        s in state(2), q in 0..2usize, a in -PI..PI, b in -PI..PI,
    ) {
        let two = apply_gate(&apply_gate(&s, &GateInstr::rotation(k, q, a)).unwrap(), &GateInstr::rotation(k, q, b)).unwrap();
        let one = apply_gate(&s, &GateInstr::rotation(k, q, a + b)).unwrap();
        for (x, y) in two.amps().iter().zip(one.amps()) {
            prop_assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn fidelity_ignores_global_phase(a in state(3), b in state(3), phi in -10.0..10.0f64) {
        let f = fidelity(&a, &b).unwrap();
        let g = fidelity(&a.clone().with_global_phase(phi), &b).unwrap();
        prop_assert!((f - g).abs() < 1e-12);
    }

    #[test]
    fn stride_matches_dense(c in circuit(4, 12)) {
        let mut dense = StateVector::basis(c.num_qubits(), 0).unwrap();
        for g in c.gates() {
            dense = apply_dense(&dense, g).unwrap();
        }
        let stride = run_circuit(&c).unwrap();
        for (x, y) in stride.amps().iter().zip(dense.amps()) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn shift_gradient_matches_finite_differences((c, t) in circuit_and_target(4, 8)) {
        let grad = fidelity_gradient(&c, &t).unwrap();
        let theta = c.angles();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            let mut cp = c.clone();
            cp.set_angles(&p).unwrap();
            p[i] -= 2.0 * h;
            let mut cm = c.clone();
            cm.set_angles(&p).unwrap();
            let fd = (circuit_fidelity(&cp, &t).unwrap() - circuit_fidelity(&cm, &t).unwrap()) / (2.0 * h);
            prop_assert!((grad[i] - fd).abs() < 1e-5, "param {}: {} vs {}", i, grad[i], fd);
        }
    }

    #[test]
    fn refinement_never_loses_fidelity((c, t) in circuit_and_target(2, 4)) {
        let cfg = RefineConfig { max_steps: 40, ..RefineConfig::default() };
        let before = circuit_fidelity(&c, &t).unwrap();
        let out = refine_angles(&c, &t, &cfg).unwrap();
        prop_assert!(out.fidelity >= before - 1e-9);
        prop_assert!(out.circuit.angles().iter().all(|a| (-PI..=PI).contains(a)));
    }
}

fn random_action(n: usize, rng: &mut ChaCha8Rng) -> AgentAction {
    use rand::Rng;
    let gate = GateKind::UNIVERSE[rng.random_range(0..if n > 1 { 4 } else { 3 })];
    let q1 = rng.random_range(0..n);
    let q2 = if gate == GateKind::Cnot { (q1 + rng.random_range(1..n)) % n } else { q1 };
    AgentAction { gate, q1, q2, theta_unit: rng.random() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_telescope_and_respect_budget(n in 1..=3usize, lambda in 1..=4usize, seed in any::<u64>()) {
        let mut env = SynthesisEnv::new(EnvConfig::new(n, lambda, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            let (obs, spec) = env.reset().unwrap();
            let f0 = env.fidelity();
            prop_assert_eq!(obs.target_amplitudes(), spec.state.amps().to_vec());
            let mut total = 0.0;
            let mut len = 0;
            loop {
                let r = env.step(&random_action(n, &mut rng)).unwrap();
                len += 1;
                total += r.reward;
                prop_assert!(!(r.terminated && r.truncated));
                prop_assert_eq!(r.obs.target_amplitudes(), spec.state.amps().to_vec());
                if r.terminated || r.truncated {
                    let bonus = if r.terminated { env.config().terminal_bonus } else { 0.0 };
                    prop_assert!((total - bonus - (r.info.fidelity - f0)).abs() < 1e-9);
                    break;
                }
            }
            prop_assert!(len <= 2 * lambda);
        }
    }

    #[test]
    fn observation_round_trip(a in state(2), b in state(2)) {
        let o = encode_observation(&a, &b).unwrap();
        prop_assert_eq!(o.current_amplitudes(), a.amps().to_vec());
        prop_assert_eq!(o.target_amplitudes(), b.amps().to_vec());
    }

    #[test]
    fn targets_reproducible(n in 1..=4usize, lambda in 1..=5usize, seed in any::<u64>()) {
        let cfg = EnvConfig::new(n, lambda, 0);
        let a = target_from_seed(&cfg, seed).unwrap();
        let b = target_from_seed(&cfg, seed).unwrap();
        prop_assert_eq!(a.reference.as_ref().map(|c| c.to_string()), b.reference.as_ref().map(|c| c.to_string()));
        prop_assert_eq!(a.state, b.state);
    }

    #[test]
    fn sampled_actions_are_consistent(n in 1..=3usize, seed in any::<u64>(), s in (1..=3usize).prop_flat_map(state)) {
        prop_assume!(s.num_qubits() == n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PolicyParams::init(PolicyShape::new(n), &mut rng);
        let obs = encode_observation(&s, &s).unwrap();
        let a = p.sample(&obs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = p.sample(&obs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.log_prob.is_finite());
        let e = p.log_prob_entropy(&obs, &a.action).unwrap();
        prop_assert!((e.log_prob - a.log_prob).abs() < 1e-9);
        if !a.action.gate.is_rotation() {
            prop_assert!(a.log_prob <= 0.0);
        }
    }
}

#[test]
fn angle_map_endpoints() {
    assert_eq!(unit_to_angle(0.0), -PI);
    assert_eq!(unit_to_angle(0.5), 0.0);
    assert_eq!(unit_to_angle(1.0), PI);
}
