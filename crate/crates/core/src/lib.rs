//! Adaptive long/short chain-of-thought reinforcement learning.
//!
//! The crate covers the pieces needed to train a policy that decides for
//! itself whether a prompt deserves long-chain reasoning:
//!
//! - [`rollout`]: responses and mode-balanced groups (half long, half short).
//! - [`reward`]: difficulty-adaptive group-wise rewards, warmup and the soft
//!   length penalty.
//! - [`grpo`]: group-normalized advantages and the clipped surrogate.
//! - [`switch_loss`]: the margin-ranking loss on the first generated token.
//! - [`env`]: a synthetic task where short mode cannot tell hard classes
//!   apart, plus a small softmax policy.
//! - [`trainer`] and [`experiment`]: the training loop, evaluation and output
//!   files; [`rollout_log`] shapes rewards offline over JSONL logs.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod grpo;
pub mod metrics;
pub mod reward;
pub mod rollout;
pub mod rollout_log;
pub mod switch_loss;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use metrics::{compute_metrics, MetricsRow};
pub use rollout::{
    make_group, short_accuracy, PromptId, PromptInstruction, PromptRecord, ReasoningMode,
    RolloutGroup, RolloutResponse,
};
