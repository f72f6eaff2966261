//! On-policy training: rollout collection, GAE, PPO and A2C updates, and the
//! training loop with periodic evaluation.

mod a2c;
mod buffer;
mod gae;
mod ppo;
mod trainer;

pub use a2c::{a2c_gradient, a2c_update, A2cConfig};
pub use buffer::{collect_rollouts, Collector, EpisodeRecord, RolloutBuffer, Transition};
pub use gae::compute_gae;
pub use ppo::{
    clip_grad_norm, clipped_surrogate, normalize_advantages, ppo_minibatch, ppo_update, MinibatchStats, PpoConfig,
    UpdateStats,
};
pub use trainer::{
    derive_seed, evaluate, held_out_targets, metrics_csv, train, Algo, EvalConfig, EvalRow, MetricsSink, NullSink, RunConfig, Strategy,
    TargetMode, TrainOutcome, METRICS_CSV_HEADER,
};

/// One flattened training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: crate::env::AgentAction,
    pub log_prob: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
}
