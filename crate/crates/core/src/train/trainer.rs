use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::a2c::{a2c_update, A2cConfig};
use super::buffer::{collect_rollouts, Collector, EpisodeRecord, RolloutBuffer};
use super::gae::compute_gae;
use super::ppo::{ppo_update, PpoConfig, UpdateStats};
use crate::env::{rcd, target_from_seed, EnvConfig, SynthesisEnv, TargetSource, TargetSpec};
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, PolicyShape};
use crate::refine::{AdamState, RefineConfig, TwoStageHook};
use crate::sim::StateVector;

pub const METRICS_CSV_HEADER: &str = "step,mean_fidelity,success_rate,mean_rcd,mean_ep_len,seed";

#[derive(Debug, Clone, PartialEq)]
pub enum Algo {
    Ppo(PpoConfig),
    A2c(A2cConfig),
}

impl Algo {
    pub fn seed(&self) -> u64 {
        match self {
            Algo::Ppo(c) => c.seed,
            Algo::A2c(c) => c.seed,
        }
    }

    pub fn total_steps(&self) -> usize {
        match self {
            Algo::Ppo(c) => c.total_steps,
            Algo::A2c(c) => c.total_steps,
        }
    }

    pub fn env_count(&self) -> usize {
        match self {
            Algo::Ppo(c) => c.env_count,
            Algo::A2c(c) => c.env_count,
        }
    }

    fn horizon(&self) -> usize {
        match self {
            Algo::Ppo(c) => c.horizon,
            Algo::A2c(c) => c.n_steps,
        }
    }

    fn lr(&self) -> f64 {
        match self {
            Algo::Ppo(c) => c.lr,
            Algo::A2c(c) => c.lr,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Algo::Ppo(c) => c.validate(),
            Algo::A2c(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// The policy picks gate, qubits and angle.
    OneStage,
    /// The policy picks structure only; angles come from refinement.
    TwoStage(RefineConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetMode {
    Generated,
    Fixed(StateVector),
    Corpus(Vec<TargetSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Evaluate whenever this many further env steps have been consumed
    /// (0: only at the end).
    pub every_steps: usize,
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            every_steps: 10_000,
            episodes: 100,
        }
    }
}

/// Everything `train` needs. The algorithm's seed is the master seed;
/// `env.seed` selects the held-out evaluation targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub algo: Algo,
    pub strategy: Strategy,
    pub target: TargetMode,
    pub eval: EvalConfig,
    /// Write a checkpoint every this many env steps.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(env: EnvConfig, algo: Algo) -> Self {
        RunConfig {
            env,
            algo,
            strategy: Strategy::OneStage,
            target: TargetMode::Generated,
            eval: EvalConfig::default(),
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }

    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape {
            angle_head: self.strategy == Strategy::OneStage,
            ..PolicyShape::new(self.env.n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.algo.validate()?;
        if self.eval.episodes == 0 {
            return Err(Error::domain("eval episodes must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::domain("checkpoint_every must be positive"));
        }
        Ok(())
    }
}

/// One evaluation over the held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub step: usize,
    pub mean_fidelity: f64,
    pub success_rate: f64,
    pub mean_rcd: f64,
    pub mean_ep_len: f64,
    pub seed: u64,
}

pub fn metrics_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.mean_fidelity, r.success_rate, r.mean_rcd, r.mean_ep_len, r.seed
        );
    }
    s
}

/// Receives the training metric stream. All methods default to no-ops.
pub trait MetricsSink {
    fn on_episode(&mut self, _step: usize, _episode: &EpisodeRecord) {}
    fn on_update(&mut self, _step: usize, _stats: &UpdateStats) {}
    fn on_eval(&mut self, _stochastic: &EvalRow, _deterministic: &EvalRow) {}
}

pub struct NullSink;

impl MetricsSink for NullSink {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    /// Stochastic-policy evaluations.
    pub rows: Vec<EvalRow>,
    /// Deterministic-policy evaluations at the same steps.
    pub det_rows: Vec<EvalRow>,
    pub steps: usize,
    pub episodes: usize,
    pub updates: usize,
}

/// SplitMix64 of `base` mixed with `stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_EVAL_ACTIONS: u64 = 3;
const STREAM_EVAL_TARGETS: u64 = 4;
const STREAM_ENV: u64 = 1 << 16;
const STREAM_ACTIONS: u64 = 1 << 17;

fn make_env(run: &RunConfig, cfg: EnvConfig, source: TargetSource) -> Result<SynthesisEnv> {
    let env = SynthesisEnv::with_source(cfg, source)?;
    Ok(match &run.strategy {
        Strategy::OneStage => env,
        Strategy::TwoStage(r) => env.with_two_stage(TwoStageHook::new(r.clone())),
    })
}

fn training_envs(run: &RunConfig, master: u64) -> Result<Vec<SynthesisEnv>> {
    (0..run.algo.env_count())
        .map(|i| {
            let cfg = EnvConfig {
                seed: derive_seed(master, STREAM_ENV + i as u64),
                ..run.env.clone()
            };
            let source = match &run.target {
                TargetMode::Generated => TargetSource::Generated,
                TargetMode::Fixed(s) => TargetSource::Fixed(s.clone()),
                TargetMode::Corpus(ts) => {
                    let mut ts = ts.clone();
                    if !ts.is_empty() {
                        let k = i % ts.len();
                        ts.rotate_left(k);
                    }
                    TargetSource::Cycle(ts)
                }
            };
            make_env(run, cfg, source)
        })
        .collect()
}

/// The held-out targets: `episodes` entries derived from `env.seed`, the
/// fixed target repeated, or the corpus cycled.
pub fn held_out_targets(run: &RunConfig) -> Result<Vec<TargetSpec>> {
    let k = run.eval.episodes;
    match &run.target {
        TargetMode::Generated => (0..k)
            .map(|i| target_from_seed(&run.env, derive_seed(run.env.seed, STREAM_EVAL_TARGETS + i as u64)))
            .collect(),
        TargetMode::Fixed(s) => Ok(vec![TargetSpec::fixed(s.clone(), run.env.lambda); k]),
        TargetMode::Corpus(ts) if ts.is_empty() => Err(Error::domain("empty target corpus")),
        TargetMode::Corpus(ts) => Ok(ts.iter().cycle().take(k).cloned().collect()),
    }
}

/// Runs one episode per held-out target. The stochastic mode samples with
/// an RNG freshly seeded from `env.seed`, so repeated evaluations of the same
/// policy agree.
pub fn evaluate(policy: &PolicyParams, run: &RunConfig, step: usize, deterministic: bool) -> Result<EvalRow> {
    let targets = held_out_targets(run)?;
    let count = targets.len();
    let mut env = make_env(run, run.env.clone(), TargetSource::Cycle(targets))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.env.seed, STREAM_EVAL_ACTIONS));
    let (mut fid, mut succ, mut rcd_sum, mut len) = (0.0, 0usize, 0.0, 0usize);
    for _ in 0..count {
        let (mut obs, spec) = env.reset()?;
        loop {
            let action = if deterministic {
                policy.act_deterministic(&obs)?
            } else {
                policy.sample(&obs, &mut rng)?.action
            };
            let r = env.step(&action)?;
            obs = r.obs;
            if r.terminated || r.truncated {
                fid += r.info.fidelity;
                succ += r.terminated as usize;
                rcd_sum += rcd(r.info.depth, spec.lambda);
                len += r.info.depth;
                break;
            }
        }
    }
    let k = count as f64;
    Ok(EvalRow {
        step,
        mean_fidelity: fid / k,
        success_rate: succ as f64 / k,
        mean_rcd: rcd_sum / k,
        mean_ep_len: len as f64 / k,
        seed: run.algo.seed(),
    })
}

fn checkpoint_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("policy_{tag}.ckpt"))
}

fn write_checkpoint(dir: &Path, tag: &str, policy: &PolicyParams) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = checkpoint_path(dir, tag);
    std::fs::write(&path, policy.to_checkpoint()).map_err(|e| Error::io(&path, e))
}

/// Divides rewards by their standard deviation over the rollout.
fn scale_rewards(buf: &mut RolloutBuffer) {
    let rewards: Vec<f64> = buf.steps.iter().flatten().map(|t| t.reward).collect();
    if rewards.len() < 2 {
        return;
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    buf.steps.iter_mut().flatten().for_each(|t| t.reward /= std);
}

/// Alternates rollout collection and updates until the step budget is spent.
/// Rollouts are shortened near the end so at most `total_steps` env steps
/// are taken; a remainder smaller than the env count is dropped.
pub fn train(run: &RunConfig, sink: &mut dyn MetricsSink) -> Result<TrainOutcome> {
    run.validate()?;
    let master = run.algo.seed();
    let mut policy = PolicyParams::init(run.policy_shape(), &mut ChaCha8Rng::seed_from_u64(derive_seed(master, STREAM_INIT)));
    let mut out = TrainOutcome {
        policy: policy.clone(),
        rows: Vec::new(),
        det_rows: Vec::new(),
        steps: 0,
        episodes: 0,
        updates: 0,
    };
    let total = run.algo.total_steps();
    let e = run.algo.env_count();
    if total < e {
        return Ok(out);
    }

    let action_seeds: Vec<u64> = (0..e).map(|i| derive_seed(master, STREAM_ACTIONS + i as u64)).collect();
    let mut collector = Collector::new(training_envs(run, master)?, &action_seeds)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(master, STREAM_SHUFFLE));
    let mut adam = AdamState::new(policy.data().len(), run.algo.lr());
    let mut steps = 0usize;
    let mut next_eval = if run.eval.every_steps == 0 { usize::MAX } else { run.eval.every_steps };
    let mut next_ckpt = run.checkpoint_every.unwrap_or(usize::MAX);

    while (total - steps) >= e {
        let h = run.algo.horizon().min((total - steps) / e);
        let mut episodes = Vec::new();
        let mut buf = collect_rollouts(&policy, &mut collector, h, |ep| episodes.push(ep.clone()))?;
        for ep in &episodes {
            sink.on_episode(steps, ep);
        }
        out.episodes += episodes.len();
        steps += h * e;

        let update = match &run.algo {
            Algo::Ppo(c) => {
                if c.normalize_rewards {
                    scale_rewards(&mut buf);
                }
                compute_gae(&mut buf, c.gamma, c.gae_lambda);
                ppo_update(&mut policy, &mut adam, &buf, c, &mut shuffle)
            }
            Algo::A2c(c) => {
                compute_gae(&mut buf, c.gamma, c.gae_lambda);
                a2c_update(&mut policy, &mut adam, &buf, c)
            }
        };
        let stats = match update {
            Ok(s) if policy.is_finite() => s,
            Ok(_) | Err(Error::NonFinite(_)) => {
                if let Some(dir) = &run.checkpoint_dir {
                    write_checkpoint(dir, &format!("abort_{steps}"), &policy)?;
                }
                return Err(Error::NonFinite(format!("training diverged at step {steps}")));
            }
            Err(err) => return Err(err),
        };
        out.updates += 1;
        sink.on_update(steps, &stats);

        let last = (total - steps) < e;
        if steps >= next_eval || last {
            let row = evaluate(&policy, run, steps, false)?;
            let det = evaluate(&policy, run, steps, true)?;
            sink.on_eval(&row, &det);
            out.rows.push(row);
            out.det_rows.push(det);
            while next_eval <= steps {
                next_eval = next_eval.saturating_add(run.eval.every_steps);
            }
        }
        if let Some(dir) = &run.checkpoint_dir {
            if steps >= next_ckpt || last {
                write_checkpoint(dir, &steps.to_string(), &policy)?;
                while next_ckpt <= steps {
                    next_ckpt = next_ckpt.saturating_add(run.checkpoint_every.unwrap_or(usize::MAX));
                }
            }
        }
    }
    out.policy = policy;
    out.steps = steps;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::zero_state;

    fn small_run(total: usize, seed: u64) -> RunConfig {
        let ppo = PpoConfig {
            horizon: 32,
            env_count: 2,
            minibatch_size: 16,
            total_steps: total,
            seed,
            ..PpoConfig::default()
        };
        let mut run = RunConfig::new(EnvConfig::new(2, 1, 9), Algo::Ppo(ppo));
        run.eval = EvalConfig { every_steps: 64, episodes: 8 };
        run
    }

    #[test]
    fn zero_steps_returns_initial_policy() {
        let run = small_run(0, 4);
        let out = train(&run, &mut NullSink).unwrap();
        let init = PolicyParams::init(run.policy_shape(), &mut ChaCha8Rng::seed_from_u64(derive_seed(4, STREAM_INIT)));
        assert_eq!(out.policy, init);
        assert!(out.rows.is_empty() && out.det_rows.is_empty());
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn seeded_rerun_identical() {
        let a = train(&small_run(200, 5), &mut NullSink).unwrap();
        let b = train(&small_run(200, 5), &mut NullSink).unwrap();
        assert_eq!(metrics_csv(&a.rows), metrics_csv(&b.rows));
        assert_eq!(a.policy, b.policy);
        // 200 = 3·64 + 8: three full rollouts and a 4-step one.
        assert_eq!(a.steps, 200);
        assert_eq!(a.updates, 4);
        assert_eq!(a.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![64, 128, 192, 200]);
        let c = train(&small_run(200, 6), &mut NullSink).unwrap();
        assert_ne!(a.policy, c.policy);
    }

    #[test]
    fn odd_remainder_dropped() {
        let out = train(&small_run(65, 1), &mut NullSink).unwrap();
        assert_eq!(out.steps, 64);
    }

    #[test]
    fn sink_sees_episodes_and_evals() {
        #[derive(Default)]
        struct Count(usize, usize, usize);
        impl MetricsSink for Count {
            fn on_episode(&mut self, _: usize, _: &EpisodeRecord) {
                self.0 += 1;
            }
            fn on_update(&mut self, _: usize, _: &UpdateStats) {
                self.1 += 1;
            }
            fn on_eval(&mut self, _: &EvalRow, _: &EvalRow) {
                self.2 += 1;
            }
        }
        let mut c = Count::default();
        let out = train(&small_run(128, 2), &mut c).unwrap();
        assert_eq!((c.0, c.1, c.2), (out.episodes, 2, 2));
        // λ=1 gives depth budget 2, so at least 64 episodes in 128 steps.
        assert!(out.episodes >= 64);
    }

    #[test]
    fn evaluation_is_repeatable_and_bounded() {
        let mut run = small_run(0, 3);
        run.target = TargetMode::Fixed(zero_state(2).unwrap());
        let p = PolicyParams::init(run.policy_shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let a = evaluate(&p, &run, 0, false).unwrap();
        assert_eq!(a, evaluate(&p, &run, 0, false).unwrap());
        assert!((0.0..=1.0).contains(&a.success_rate));
        assert!(a.mean_ep_len >= 1.0 && a.mean_ep_len <= 2.0);
        assert!((a.mean_rcd - 100.0 * a.mean_ep_len).abs() < 1e-9);
    }

    #[test]
    fn two_stage_policy_has_no_angle_head() {
        let mut run = small_run(64, 3);
        run.strategy = Strategy::TwoStage(RefineConfig::default());
        assert!(!run.policy_shape().angle_head);
        let out = train(&run, &mut NullSink).unwrap();
        assert_eq!(out.steps, 64);
    }

    #[test]
    fn a2c_runs_and_checkpoints() {
        let dir = std::env::temp_dir().join(format!("qsynth-a2c-{}", std::process::id()));
        let a2c = A2cConfig { total_steps: 80, env_count: 2, ..A2cConfig::default() };
        let mut run = RunConfig::new(EnvConfig::new(2, 2, 1), Algo::A2c(a2c));
        run.eval = EvalConfig { every_steps: 0, episodes: 4 };
        run.checkpoint_every = Some(40);
        run.checkpoint_dir = Some(dir.clone());
        let out = train(&run, &mut NullSink).unwrap();
        assert_eq!(out.updates, 8);
        assert_eq!(out.rows.len(), 1);
        let text = std::fs::read_to_string(checkpoint_path(&dir, "80")).unwrap();
        assert_eq!(PolicyParams::from_checkpoint(&text).unwrap(), out.policy);
        assert!(checkpoint_path(&dir, "40").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
