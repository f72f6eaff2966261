use super::ppo::{clip_grad_norm, UpdateStats};
use super::{RolloutBuffer, Sample};
use crate::error::{Error, Result};
use crate::policy::{LossCoefficients, ParamGrads, PolicyParams};
use crate::refine::AdamState;

/// Synchronous advantage actor-critic: one gradient step per rollout, no
/// ratio or clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct A2cConfig {
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Steps per environment per update.
    pub n_steps: usize,
    pub env_count: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            lr: 1e-3,
            gamma: 0.99,
            gae_lambda: 1.0,
            n_steps: 5,
            env_count: 8,
            entropy_coef: 0.01,
            value_coef: 0.5,
            total_steps: 50_000,
            seed: 0,
            max_grad_norm: Some(0.5),
        }
    }
}

impl A2cConfig {
    /// The learning rates swept for the A2C baseline.
    pub const LR_GRID: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::domain("A2C lr must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::domain("gamma must be in (0, 1] and gae_lambda in [0, 1]"));
        }
        if self.n_steps == 0 || self.env_count == 0 {
            return Err(Error::domain("n_steps and env_count must be positive"));
        }
        Ok(())
    }
}

/// Gradient of `−mean(log π·Â) + value_coef·mean((V−R)²) − entropy_coef·mean(H)`.
pub fn a2c_gradient(policy: &PolicyParams, samples: &[Sample], cfg: &A2cConfig) -> Result<(ParamGrads, UpdateStats)> {
    let b = samples.len().max(1) as f64;
    let mut grads = ParamGrads::zeros(policy.shape());
    let mut st = UpdateStats::default();
    for s in samples {
        let e = policy.accumulate(
            &s.obs,
            &s.action,
            |e| LossCoefficients {
                log_prob: -s.advantage / b,
                value: cfg.value_coef * 2.0 * (e.value - s.ret) / b,
                entropy: -cfg.entropy_coef / b,
            },
            &mut grads,
        )?;
        st.policy_loss -= e.log_prob * s.advantage / b;
        st.value_loss += (e.value - s.ret).powi(2) / b;
        st.entropy += e.entropy / b;
    }
    if !st.policy_loss.is_finite() || !st.value_loss.is_finite() {
        return Err(Error::NonFinite("a2c loss".into()));
    }
    st.minibatches = 1;
    Ok((grads, st))
}

pub fn a2c_update(policy: &mut PolicyParams, adam: &mut AdamState, buf: &RolloutBuffer, cfg: &A2cConfig) -> Result<UpdateStats> {
    let samples = buf.samples()?;
    let (mut grads, mut st) = a2c_gradient(policy, &samples, cfg)?;
    st.grad_norm = match cfg.max_grad_norm {
        Some(m) => clip_grad_norm(&mut grads, m),
        None => grads.norm(),
    };
    adam.lr = cfg.lr;
    adam.step(policy.data_mut(), &grads.data)?;
    policy.clamp_log_std();
    Ok(st)
}
