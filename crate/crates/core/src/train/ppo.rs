use rand::seq::SliceRandom;
use rand::Rng;

use super::{RolloutBuffer, Sample};
use crate::error::{Error, Result};
use crate::policy::{LossCoefficients, ParamGrads, PolicyParams};
use crate::refine::AdamState;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub lr: f64,
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Steps per environment per rollout.
    pub horizon: usize,
    pub env_count: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
    /// Rescale rollout rewards by their standard deviation before GAE.
    pub normalize_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 5e-4,
            clip_ratio: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch_size: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            horizon: 2048,
            env_count: 8,
            total_steps: 200_000,
            seed: 0,
            max_grad_norm: Some(0.5),
            normalize_rewards: false,
        }
    }
}

impl PpoConfig {
    /// Defaults for the two-stage strategy (lower learning rate).
    pub fn two_stage() -> Self {
        PpoConfig {
            lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::domain(m.to_string()));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must be in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if !(self.lr >= 0.0) || self.horizon == 0 || self.env_count == 0 || self.minibatch_size == 0 {
            return bad("lr must be non-negative and horizon, env_count, minibatch_size positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

impl UpdateStats {
    fn add(&mut self, m: &MinibatchStats, grad_norm: f64) {
        self.policy_loss += m.policy_loss;
        self.value_loss += m.value_loss;
        self.entropy += m.entropy;
        self.approx_kl += m.approx_kl;
        self.clip_fraction += m.clip_fraction;
        self.grad_norm += grad_norm;
        self.minibatches += 1;
    }

    fn finish(mut self) -> Self {
        let k = self.minibatches.max(1) as f64;
        self.policy_loss /= k;
        self.value_loss /= k;
        self.entropy /= k;
        self.approx_kl /= k;
        self.clip_fraction /= k;
        self.grad_norm /= k;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinibatchStats {
    pub ratios: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// `min(ρ·Â, clamp(ρ, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Standardizes in place (population std, floored at 1e-8). Slices of
/// length ≤ 1 are left alone.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() <= 1 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Scales `grads` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / (norm + 1e-12));
    }
    norm
}

/// Loss statistics and gradient of the PPO objective on one minibatch.
/// `advantages` must already be normalized as desired.
pub fn ppo_minibatch(
    policy: &PolicyParams,
    batch: &[&Sample],
    advantages: &[f64],
    cfg: &PpoConfig,
) -> Result<(ParamGrads, MinibatchStats)> {
    let b = batch.len() as f64;
    let mut grads = ParamGrads::zeros(policy.shape());
    let mut stats = MinibatchStats::default();
    for (s, adv) in batch.iter().zip(advantages) {
        let adv = *adv;
        let mut ratio = 0.0;
        let e = policy.accumulate(
            &s.obs,
            &s.action,
            |e| {
                ratio = (e.log_prob - s.log_prob).exp();
                let unclipped = ratio * adv;
                let active = unclipped <= clipped_surrogate(ratio, adv, cfg.clip_ratio);
                LossCoefficients {
                    log_prob: if active { -unclipped / b } else { 0.0 },
                    value: cfg.value_coef * 2.0 * (e.value - s.ret) / b,
                    entropy: -cfg.entropy_coef / b,
                }
            },
            &mut grads,
        )?;
        stats.policy_loss -= clipped_surrogate(ratio, adv, cfg.clip_ratio) / b;
        stats.value_loss += (e.value - s.ret).powi(2) / b;
        stats.entropy += e.entropy / b;
        stats.approx_kl += ((ratio - 1.0) - ratio.ln()) / b;
        if (ratio - 1.0).abs() > cfg.clip_ratio {
            stats.clip_fraction += 1.0 / b;
        }
        stats.ratios.push(ratio);
    }
    let total = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    if !total.is_finite() || grads.data.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("ppo loss".into()));
    }
    Ok((grads, stats))
}

/// Clipped-surrogate PPO over `epochs` passes of shuffled minibatches.
pub fn ppo_update(
    policy: &mut PolicyParams,
    adam: &mut AdamState,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let samples = buf.samples()?;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|i| &samples[*i]).collect();
            let mut adv: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
            normalize_advantages(&mut adv);
            let (mut grads, mb) = ppo_minibatch(policy, &batch, &adv, cfg)?;
            let norm = match cfg.max_grad_norm {
                Some(m) => clip_grad_norm(&mut grads, m),
                None => grads.norm(),
            };
            adam.step(policy.data_mut(), &grads.data)?;
            policy.clamp_log_std();
            stats.add(&mb, norm);
        }
    }
    Ok(stats.finish())
}
