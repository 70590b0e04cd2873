//! Group-relative advantages and the clipped policy-gradient surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::RolloutGroup;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub clip_epsilon: f64,
    /// Weight of the mode switching loss in the combined objective.
    pub lambda: f64,
    pub advantage_std_floor: f64,
    pub kl_coeff: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            clip_epsilon: 0.2,
            lambda: 0.1,
            advantage_std_floor: 1e-6,
            kl_coeff: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.clip_epsilon,
            self.lambda,
            self.advantage_std_floor,
            self.kl_coeff,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("optimizer values must be finite".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "optimizer.clip_epsilon = {} outside (0, 1)",
                self.clip_epsilon
            )));
        }
        if self.lambda < 0.0 || self.kl_coeff < 0.0 {
            return Err(Error::Config(
                "optimizer.lambda and optimizer.kl_coeff must be >= 0".into(),
            ));
        }
        if self.advantage_std_floor <= 0.0 {
            return Err(Error::Config(
                "optimizer.advantage_std_floor must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Loss terms and the flat parameter gradient of the combined objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub grpo_loss: f64,
    pub rmsl_loss: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
}

/// `(r_i - mean) / max(std, floor)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], cfg: &OptimizerConfig) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(format!("reward {i} is not finite")));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(cfg.advantage_std_floor);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Surrogate loss with its partial derivatives with respect to every entry
/// of `new_logprobs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Clipped surrogate, averaged per response over tokens and then over the
/// group, plus an optional KL penalty to the sampling policy.
///
/// A ratio sitting exactly on a clip boundary is treated as clipped, so its
/// partial derivative is zero.
pub fn grpo_surrogate(
    group: &RolloutGroup,
    advantages: &[f64],
    new_logprobs: &[Vec<f64>],
    cfg: &OptimizerConfig,
) -> Result<SurrogateOutput> {
    let responses = group.responses();
    if advantages.len() != responses.len() || new_logprobs.len() != responses.len() {
        return Err(Error::InvalidInput(format!(
            "group of {} responses with {} advantages and {} log-prob rows",
            responses.len(),
            advantages.len(),
            new_logprobs.len()
        )));
    }
    let g = responses.len() as f64;
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(responses.len());

    for (i, ((resp, &adv), new)) in responses
        .iter()
        .zip(advantages)
        .zip(new_logprobs)
        .enumerate()
    {
        let old = &resp.old_logprobs;
        if old.len() != new.len() || old.is_empty() {
            return Err(Error::InvalidInput(format!(
                "response {i}: {} old vs {} new log-probabilities",
                old.len(),
                new.len()
            )));
        }
        let w = 1.0 / (g * old.len() as f64);
        let mut row = Vec::with_capacity(new.len());
        for (&o, &n) in old.iter().zip(new) {
            let ratio = (n - o).exp();
            let clipped = ratio.clamp(lo, hi);
            let unclipped_active = if adv > 0.0 {
                ratio < hi
            } else if adv < 0.0 {
                ratio > lo
            } else {
                false
            };
            let objective = (ratio * adv).min(clipped * adv);
            loss -= w * objective;
            let mut d = if unclipped_active {
                -w * ratio * adv
            } else {
                0.0
            };
            if cfg.kl_coeff > 0.0 {
                // k3 estimator: exp(o - n) - (o - n) - 1
                let delta = o - n;
                loss += cfg.kl_coeff * w * (delta.exp() - delta - 1.0);
                d += cfg.kl_coeff * w * (1.0 - delta.exp());
            }
            row.push(d);
        }
        grad.push(row);
    }
    Ok(SurrogateOutput { loss, grad })
}

pub fn total_loss(grpo_loss: f64, rmsl_loss: f64, cfg: &OptimizerConfig) -> f64 {
    grpo_loss + cfg.lambda * rmsl_loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{make_group, ReasoningMode, RolloutResponse};

    fn cfg() -> OptimizerConfig {
        OptimizerConfig::default()
    }

    fn group_with(old: &[Vec<f64>]) -> RolloutGroup {
        let half = old.len() / 2;
        let mk = |i: usize, lp: &Vec<f64>| {
            let mode = if i < half {
                ReasoningMode::Long
            } else {
                ReasoningMode::Short
            };
            RolloutResponse::from_tokens("p".into(), mode, vec![1; lp.len()], lp.clone()).unwrap()
        };
        let rs: Vec<_> = old.iter().enumerate().map(|(i, lp)| mk(i, lp)).collect();
        let (l, s) = rs.split_at(half);
        make_group(l.to_vec(), s.to_vec()).unwrap()
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(
            group_advantages(&[1.5, -1.0, 1.5, -1.0], &cfg()).unwrap(),
            [1.0, -1.0, 1.0, -1.0]
        );
        assert_eq!(group_advantages(&[1.0, -1.0], &cfg()).unwrap(), [1.0, -1.0]);
        assert_eq!(group_advantages(&[0.7; 5], &cfg()).unwrap(), [0.0; 5]);
        assert!(group_advantages(&[1.0], &cfg()).is_err());
        assert!(group_advantages(&[1.0, f64::INFINITY], &cfg()).is_err());
    }

    #[test]
    fn unit_ratio_collapses_to_mean_advantage() {
        let old = vec![
            vec![-0.3, 0.0],
            vec![-1.0],
            vec![0.0, -0.2, -0.1],
            vec![-2.0],
        ];
        let g = group_with(&old);
        let adv = [1.0, -0.5, 0.25, 2.0];
        let out = grpo_surrogate(&g, &adv, &old, &cfg()).unwrap();
        let mean = adv.iter().sum::<f64>() / 4.0;
        assert!((out.loss + mean).abs() < 1e-15);
    }

    #[test]
    fn zero_advantages_are_inert() {
        let old = vec![vec![-0.3], vec![-1.0]];
        let new = vec![vec![0.1], vec![-0.4]];
        let out = grpo_surrogate(&group_with(&old), &[0.0, 0.0], &new, &cfg()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn clipped_single_token() {
        // ratio 1.5 with A = +1 contributes -1.2 / G
        let old = vec![vec![0.0], vec![0.0]];
        let new = vec![vec![1.5f64.ln()], vec![0.0]];
        let out = grpo_surrogate(&group_with(&old), &[1.0, 0.0], &new, &cfg()).unwrap();
        assert!((out.loss - (-1.2 / 2.0)).abs() < 1e-12);
        assert_eq!(out.grad[0][0], 0.0);
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let old = vec![vec![0.0, 0.0], vec![0.0]];
        let g = group_with(&old);
        assert!(grpo_surrogate(&g, &[1.0], &old, &cfg()).is_err());
        assert!(grpo_surrogate(&g, &[1.0, 1.0], &[vec![0.0], vec![0.0]], &cfg()).is_err());
    }

    #[test]
    fn kl_is_zero_at_old_policy() {
        let old = vec![vec![-0.3, -0.1], vec![-1.0]];
        let c = OptimizerConfig {
            kl_coeff: 0.5,
            ..cfg()
        };
        let out = grpo_surrogate(&group_with(&old), &[0.0, 0.0], &old, &c).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn combined_objective() {
        let c = cfg();
        assert!((total_loss(2.0, 0.5, &c) - 2.05).abs() < 1e-15);
        assert_eq!(
            total_loss(
                3.25,
                17.0,
                &OptimizerConfig {
                    lambda: 0.0,
                    ..c.clone()
                }
            ),
            3.25
        );
        assert_eq!(
            total_loss(0.0, 1.0, &OptimizerConfig { lambda: 1.0, ..c }),
            1.0
        );
    }
}
