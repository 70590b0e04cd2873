//! Run configuration, read from a TOML document.
//!
//! Every key is optional except where noted; unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! group_size = 16            # G, must be even
//! batch_prompts = 8          # prompts per step, cycling through the classes
//! total_steps = 600
//! learning_rate = 0.5
//! probe_samples = 4          # uninstructed samples per prompt for step metrics
//! eval_samples_per_class = 200
//!
//! [shaping]                  # reward::ShapingConfig
//! theta = 0.5
//! r_incorrect = -1.0
//! r_base = 1.0
//! r_bonus = 1.5
//! warmup_steps = 50
//! warmup_schedule = "ramp_to_target"   # or "literal"
//! length_penalty_enabled = true
//! length_penalty_scope = "correct_long_only"   # or "all_long"
//! # length_hard_cap = 64
//! format_policy = "treat_as_incorrect"  # or "no_check"
//!
//! [optimizer]                # grpo::OptimizerConfig
//! clip_epsilon = 0.2
//! lambda = 0.1
//! advantage_std_floor = 1e-6
//! kl_coeff = 0.0
//!
//! [switch]                   # switch_loss::SwitchLossConfig (theta comes from [shaping])
//! long_token_ids = [0]
//! top_k = 5
//! margin_easy = 0.1
//! margin_hard = 0.1
//!
//! [task]                     # env::SyntheticTask
//! num_classes = 8
//! answer_vocab = 8
//! short_start_tokens = 3
//! targets = [0, 1, 2, 3, 4, 5, 6, 7]
//! alias_groups = [[0], [1], [2], [3], [4, 5], [6, 7]]
//! long_len_range = [24, 48]
//! short_len_range = [4, 12]
//!
//! [init]                   # env::WarmStart, starting logits (all default 0)
//! long_mode_logit = 0.0
//! long_answer_logit = 0.0
//! short_answer_logit = 0.0
//!
//! [output]
//! dir = "runs/default"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{SyntheticTask, WarmStart};
use crate::error::{Error, Result};
use crate::grpo::OptimizerConfig;
use crate::reward::ShapingConfig;
use crate::switch_loss::SwitchLossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub metrics_file: String,
    pub policy_file: String,
    pub summary_file: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
            metrics_file: "metrics.csv".into(),
            policy_file: "policy.bin".into(),
            summary_file: "summary.json".into(),
        }
    }
}

impl OutputConfig {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(&self.metrics_file)
    }

    pub fn policy_path(&self) -> PathBuf {
        self.dir.join(&self.policy_file)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.dir.join(&self.summary_file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub group_size: usize,
    pub batch_prompts: usize,
    pub total_steps: u64,
    pub learning_rate: f64,
    pub probe_samples: usize,
    pub eval_samples_per_class: usize,
    pub shaping: ShapingConfig,
    pub optimizer: OptimizerConfig,
    pub switch: SwitchLossConfig,
    pub task: SyntheticTask,
    pub init: WarmStart,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            group_size: 16,
            batch_prompts: 8,
            total_steps: 600,
            learning_rate: 0.5,
            probe_samples: 4,
            eval_samples_per_class: 200,
            shaping: ShapingConfig::default(),
            optimizer: OptimizerConfig::default(),
            switch: SwitchLossConfig::default(),
            task: SyntheticTask::default(),
            init: WarmStart::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync_shared();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy the shared threshold from the shaping section into the switch loss.
    pub fn sync_shared(&mut self) {
        self.switch.theta = self.shaping.theta;
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 || !self.group_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "group_size = {} must be even and >= 2",
                self.group_size
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.batch_prompts == 0 {
            return Err(Error::Config("batch_prompts must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.eval_samples_per_class == 0 {
            return Err(Error::Config("eval_samples_per_class must be >= 1".into()));
        }
        self.shaping.validate()?;
        self.optimizer.validate()?;
        self.switch.validate()?;
        self.task.validate()?;
        self.init.validate()?;
        if let Some(&bad) = self
            .switch
            .long_token_ids
            .iter()
            .find(|&&t| t as usize >= self.task.first_token_vocab())
        {
            return Err(Error::Config(format!(
                "switch.long_token_ids contains {bad}, outside the {}-token first-token vocabulary",
                self.task.first_token_vocab()
            )));
        }
        if (self.switch.theta - self.shaping.theta).abs() > 0.0 {
            return Err(Error::Config(
                "switch.theta must equal shaping.theta".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(RunConfig::from_toml_str("sede = 3").is_err());
        assert!(RunConfig::from_toml_str("[shaping]\ntheta_x = 0.1").is_err());
        assert!(RunConfig::from_toml_str("[task]\nfoo = 1").is_err());
    }

    #[test]
    fn theta_propagates_to_switch_loss() {
        let cfg = RunConfig::from_toml_str("[shaping]\ntheta = 0.25").unwrap();
        assert_eq!(cfg.switch.theta, 0.25);
    }

    #[test]
    fn odd_group_rejected() {
        assert!(RunConfig::from_toml_str("group_size = 7").is_err());
        assert!(RunConfig::from_toml_str("total_steps = 0").is_err());
    }

    #[test]
    fn long_token_outside_vocab_rejected() {
        assert!(RunConfig::from_toml_str("[switch]\nlong_token_ids = [9]").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig {
            seed: 42,
            ..RunConfig::default()
        };
        cfg.shaping.length_hard_cap = Some(60);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
