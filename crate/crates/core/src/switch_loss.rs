//! Margin-ranking loss on the first generated token.
//!
//! The first-token distribution is split into the probability mass of tokens
//! that open a long reasoning span and the mass of the `top_k` most likely
//! remaining tokens. On easy prompts (`alpha >= theta`) the loss pushes long
//! mass below short mass by `margin_easy`; on hard prompts it pushes the other
//! way by `margin_hard`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::TokenId;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchLossConfig {
    /// First tokens that open a long reasoning span.
    pub long_token_ids: BTreeSet<TokenId>,
    pub top_k: usize,
    pub margin_easy: f64,
    pub margin_hard: f64,
    /// Shared with the reward threshold; filled in from the shaping config.
    #[serde(skip)]
    pub theta: f64,
}

impl Default for SwitchLossConfig {
    fn default() -> Self {
        SwitchLossConfig {
            long_token_ids: [0].into(),
            top_k: 5,
            margin_easy: 0.1,
            margin_hard: 0.1,
            theta: 0.5,
        }
    }
}

impl SwitchLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.long_token_ids.is_empty() {
            return Err(Error::Config(
                "switch.long_token_ids must not be empty".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(Error::Config("switch.top_k must be >= 1".into()));
        }
        for m in [self.margin_easy, self.margin_hard] {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::Config(format!(
                    "switch margin {m} must be finite and >= 0"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!(
                "switch theta {} outside [0, 1]",
                self.theta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstTokenPartition {
    pub long_mass: f64,
    pub short_mass: f64,
    pub long_members: Vec<TokenId>,
    /// At most `top_k` ids, most probable first.
    pub short_members: Vec<TokenId>,
    pub vocab_size: usize,
}

pub fn partition_first_token(probs: &[f64], cfg: &SwitchLossConfig) -> Result<FirstTokenPartition> {
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "first-token probabilities must be a distribution (sum = {total})"
        )));
    }
    if let Some(&bad) = cfg
        .long_token_ids
        .iter()
        .find(|&&t| t as usize >= probs.len())
    {
        return Err(Error::InvalidInput(format!(
            "long token id {bad} outside a vocabulary of {}",
            probs.len()
        )));
    }
    let long_members: Vec<TokenId> = cfg.long_token_ids.iter().copied().collect();
    let mut rest: Vec<TokenId> = (0..probs.len() as TokenId)
        .filter(|t| !cfg.long_token_ids.contains(t))
        .collect();
    // descending probability, ties to the smaller id
    rest.sort_by(|&a, &b| {
        probs[b as usize]
            .total_cmp(&probs[a as usize])
            .then(a.cmp(&b))
    });
    rest.truncate(cfg.top_k);

    Ok(FirstTokenPartition {
        long_mass: long_members.iter().map(|&t| probs[t as usize]).sum(),
        short_mass: rest.iter().map(|&t| probs[t as usize]).sum(),
        long_members,
        short_members: rest,
        vocab_size: probs.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchLoss {
    pub loss: f64,
    /// Partial derivative with respect to each first-token probability.
    pub grad_probs: Vec<f64>,
}

pub fn mode_switch_loss(
    partition: &FirstTokenPartition,
    alpha: f64,
    cfg: &SwitchLossConfig,
) -> SwitchLoss {
    // sign = +1 pushes long mass down, -1 pushes it up
    let (sign, margin) = if alpha >= cfg.theta {
        (1.0, cfg.margin_easy)
    } else {
        (-1.0, cfg.margin_hard)
    };
    let gap = sign * (partition.long_mass - partition.short_mass) + margin;
    let mut grad_probs = vec![0.0; partition.vocab_size];
    if gap <= 0.0 {
        return SwitchLoss {
            loss: 0.0,
            grad_probs,
        };
    }
    for &t in &partition.long_members {
        grad_probs[t as usize] = sign;
    }
    for &t in &partition.short_members {
        grad_probs[t as usize] = -sign;
    }
    SwitchLoss {
        loss: gap,
        grad_probs,
    }
}

/// Pull a gradient over softmax probabilities back onto the logits.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
