use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::env::{rcd, AgentAction, Observation, SynthesisEnv};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: AgentAction,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// `V(s_final)` when the episode was truncated here, else 0.
    pub bootstrap_value: f64,
}

/// `H` steps for each of `E` environments, stored env-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<Vec<Transition>>,
    /// Value of the observation following each env's last step (used when
    /// that step did not end an episode).
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens into samples; requires [`compute_gae`](super::compute_gae)
    /// to have run.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        if self.advantages.len() != self.len() {
            return Err(Error::State("advantages not computed for this buffer".into()));
        }
        Ok(self
            .steps
            .iter()
            .flatten()
            .zip(self.advantages.iter().zip(&self.returns))
            .map(|(t, (a, r))| Sample {
                obs: t.obs.clone(),
                action: t.action,
                log_prob: t.log_prob,
                value: t.value,
                advantage: *a,
                ret: *r,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub env_index: usize,
    pub final_fidelity: f64,
    pub success: bool,
    pub length: usize,
    pub rcd: f64,
    pub target_seed: Option<u64>,
}

/// A set of environments with their current observations and per-env action
/// RNGs.
#[derive(Debug, Clone)]
pub struct Collector {
    envs: Vec<SynthesisEnv>,
    obs: Vec<Observation>,
    rngs: Vec<ChaCha8Rng>,
}

impl Collector {
    /// Resets every environment; `action_seeds[i]` seeds env `i`'s sampler.
    pub fn new(mut envs: Vec<SynthesisEnv>, action_seeds: &[u64]) -> Result<Self> {
        if envs.len() != action_seeds.len() || envs.is_empty() {
            return Err(Error::domain("need one action seed per environment"));
        }
        let obs = envs
            .iter_mut()
            .map(|e| e.reset().map(|(o, _)| o))
            .collect::<Result<_>>()?;
        Ok(Collector {
            envs,
            obs,
            rngs: action_seeds.iter().map(|s| ChaCha8Rng::seed_from_u64(*s)).collect(),
        })
    }

    pub fn env_count(&self) -> usize {
        self.envs.len()
    }

    pub fn envs(&self) -> &[SynthesisEnv] {
        &self.envs
    }
}

/// Runs exactly `horizon` steps in every environment, resetting finished
/// episodes.
pub fn collect_rollouts(
    policy: &PolicyParams,
    collector: &mut Collector,
    horizon: usize,
    mut on_episode: impl FnMut(&EpisodeRecord),
) -> Result<RolloutBuffer> {
    let mut buf = RolloutBuffer::default();
    for i in 0..collector.envs.len() {
        let env = &mut collector.envs[i];
        let rng = &mut collector.rngs[i];
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let obs = &collector.obs[i];
            let s = policy.sample(obs, rng)?;
            let seed = env.target_seed();
            let r = env.step(&s.action).map_err(|e| {
                Error::State(format!("env {i} failed at depth {}: {e}", env.circuit().gate_count()))
            })?;
            let bootstrap_value = if r.truncated { policy.forward(&r.obs)?.value } else { 0.0 };
            steps.push(Transition {
                obs: std::mem::replace(&mut collector.obs[i], r.obs).vec,
                action: s.action,
                log_prob: s.log_prob,
                reward: r.reward,
                value: s.value,
                terminated: r.terminated,
                truncated: r.truncated,
                bootstrap_value,
            });
            if r.terminated || r.truncated {
                on_episode(&EpisodeRecord {
                    env_index: i,
                    final_fidelity: r.info.fidelity,
                    success: r.terminated,
                    length: r.info.depth,
                    rcd: rcd(r.info.depth, env.config().lambda),
                    target_seed: seed,
                });
                collector.obs[i] = env.reset()?.0;
            }
        }
        buf.last_values.push(policy.forward(&collector.obs[i])?.value);
        buf.steps.push(steps);
    }
    Ok(buf)
}
