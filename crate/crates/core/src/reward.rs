//! Reward engine: correctness and format judging, the difficulty-adaptive
//! group-wise reward, the short-bonus warmup schedule and the soft length
//! penalty, composed into one [`ShapedReward`] per response.
//!
//! Difficulty is estimated per prompt from `alpha`, the accuracy of the
//! group's short-mode half. When `alpha > theta` the prompt counts as easy and
//! a correct short answer earns the bonus; otherwise a correct long answer
//! does. Incorrect answers always earn `r_incorrect`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{short_accuracy, ReasoningMode, RolloutGroup, RolloutResponse, TokenId};

/// Which long responses the length penalty applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthPenaltyScope {
    #[default]
    CorrectLongOnly,
    AllLong,
}

/// How a failed format check affects the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatPolicy {
    /// Malformed responses are scored as incorrect.
    #[default]
    TreatAsIncorrect,
    NoCheck,
}

/// Shape of the short-bonus warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupSchedule {
    /// Linear ramp from `r_base` to `r_bonus`, then hold at `r_bonus`.
    #[default]
    RampToTarget,
    /// Linear ramp from `r_base` towards `r_bonus`, then drop back to
    /// `r_base` once the warmup horizon is reached.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    /// Short-accuracy threshold separating easy from hard prompts.
    pub theta: f64,
    pub r_incorrect: f64,
    /// Reward for a correct answer in the mode not favoured by difficulty.
    pub r_base: f64,
    /// Reward for a correct answer in the favoured mode.
    pub r_bonus: f64,
    pub warmup_steps: u64,
    pub warmup_schedule: WarmupSchedule,
    pub length_penalty_enabled: bool,
    pub length_penalty_scope: LengthPenaltyScope,
    /// Optional generation cap; long responses beyond it take the full penalty.
    pub length_hard_cap: Option<usize>,
    pub format_policy: FormatPolicy,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            theta: 0.5,
            r_incorrect: -1.0,
            r_base: 1.0,
            r_bonus: 1.5,
            warmup_steps: 0,
            warmup_schedule: WarmupSchedule::RampToTarget,
            length_penalty_enabled: true,
            length_penalty_scope: LengthPenaltyScope::CorrectLongOnly,
            length_hard_cap: None,
            format_policy: FormatPolicy::TreatAsIncorrect,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!(
                "shaping.theta = {} outside [0, 1]",
                self.theta
            )));
        }
        let rs = [self.r_incorrect, self.r_base, self.r_bonus];
        if rs.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("shaping rewards must be finite".into()));
        }
        if !(self.r_incorrect < self.r_base && self.r_base < self.r_bonus) {
            return Err(Error::Config(format!(
                "shaping rewards must satisfy r_incorrect < r_base < r_bonus (got {} / {} / {})",
                self.r_incorrect, self.r_base, self.r_bonus
            )));
        }
        if self.length_hard_cap == Some(0) {
            return Err(Error::Config(
                "shaping.length_hard_cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-group length statistics for the soft length penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthStats {
    /// Longest response in the group.
    pub l_max: f64,
    /// Mean length of the short responses.
    pub l_min: f64,
    pub l_delta: f64,
}

impl LengthStats {
    pub fn new(l_max: f64, l_min: f64) -> Self {
        LengthStats {
            l_max,
            l_min,
            l_delta: l_max - l_min,
        }
    }

    pub fn from_group(group: &RolloutGroup) -> Self {
        let l_max = group
            .responses()
            .iter()
            .map(|r| r.length)
            .max()
            .unwrap_or(0) as f64;
        let short = group.short_half();
        let l_min = short.iter().map(|r| r.length).sum::<usize>() as f64 / short.len() as f64;
        LengthStats::new(l_max, l_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapedReward {
    pub total: f64,
    /// Adaptive reward after warmup.
    pub base: f64,
    /// In `[-1, 0]`; always zero for short responses.
    pub length_penalty: f64,
}

/// Decides whether a final answer matches a reference answer.
pub trait Judge {
    fn judge(&self, answer: &str, reference: &str) -> bool;
}

/// Whitespace-trimmed exact match, with numeric comparison when both sides
/// parse as numbers.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn judge(&self, answer: &str, reference: &str) -> bool {
        judge_correct(answer, reference)
    }
}

const NUMERIC_RTOL: f64 = 1e-9;

pub fn judge_correct(answer: &str, reference: &str) -> bool {
    let (a, b) = (answer.trim(), reference.trim());
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            x == y || (x - y).abs() <= NUMERIC_RTOL * x.abs().max(y.abs())
        }
        _ => a == b,
    }
}

/// Long responses must open with a long marker and close the reasoning span
/// with an end marker somewhere after it. Short responses are exempt.
pub fn check_format(
    response: &RolloutResponse,
    long_marker_ids: &HashSet<TokenId>,
    end_marker_ids: &HashSet<TokenId>,
) -> bool {
    let Some((first, rest)) = response.tokens.split_first() else {
        return false;
    };
    match response.mode {
        ReasoningMode::Short => true,
        ReasoningMode::Long => {
            long_marker_ids.contains(first) && rest.iter().any(|t| end_marker_ids.contains(t))
        }
    }
}

pub fn adaptive_reward(
    mode: ReasoningMode,
    correct: bool,
    alpha: f64,
    cfg: &ShapingConfig,
    short_bonus_now: f64,
) -> f64 {
    if !correct {
        return cfg.r_incorrect;
    }
    let easy = alpha > cfg.theta;
    match (mode, easy) {
        (ReasoningMode::Short, true) => short_bonus_now,
        (ReasoningMode::Long, true) => cfg.r_base,
        (ReasoningMode::Short, false) => cfg.r_base,
        (ReasoningMode::Long, false) => cfg.r_bonus,
    }
}

/// Short-correct reward on easy prompts at `current_step`.
pub fn warmup_bonus(current_step: u64, cfg: &ShapingConfig) -> f64 {
    if current_step < cfg.warmup_steps {
        let frac = current_step as f64 / cfg.warmup_steps as f64;
        return frac * (cfg.r_bonus - cfg.r_base) + cfg.r_base;
    }
    match cfg.warmup_schedule {
        WarmupSchedule::RampToTarget => cfg.r_bonus,
        WarmupSchedule::Literal if cfg.warmup_steps > 0 => cfg.r_base,
        WarmupSchedule::Literal => cfg.r_bonus,
    }
}

/// Soft penalty for a long response of `response_length` tokens.
///
/// Zero up to the short-mode mean length, falling linearly to -1 at the
/// group's longest response.
pub fn length_penalty(response_length: usize, stats: &LengthStats, hard_cap: Option<usize>) -> f64 {
    if let Some(cap) = hard_cap {
        if response_length > cap {
            return -1.0;
        }
    }
    if stats.l_delta <= 0.0 {
        return 0.0;
    }
    let len = response_length as f64;
    let free = stats.l_max - stats.l_delta;
    let p = if len <= free {
        0.0
    } else if len <= stats.l_max {
        (free - len) / stats.l_delta
    } else {
        -1.0
    };
    p.clamp(-1.0, 0.0)
}

/// Shape every response in `group`, in group order.
pub fn shape_group(
    group: &RolloutGroup,
    cfg: &ShapingConfig,
    current_step: u64,
) -> Result<Vec<ShapedReward>> {
    for (i, r) in group.responses().iter().enumerate() {
        if r.correct.is_none() {
            return Err(Error::InvalidInput(format!(
                "response {i} of prompt {} is missing its correctness flag",
                group.prompt_id()
            )));
        }
        if r.format_ok.is_none() && cfg.format_policy == FormatPolicy::TreatAsIncorrect {
            return Err(Error::InvalidInput(format!(
                "response {i} of prompt {} is missing its format flag",
                group.prompt_id()
            )));
        }
    }
    let alpha = short_accuracy(group);
    let bonus = warmup_bonus(current_step, cfg);
    let stats = LengthStats::from_group(group);

    Ok(group
        .responses()
        .iter()
        .map(|r| {
            let correct = r.is_correct()
                && (cfg.format_policy == FormatPolicy::NoCheck || r.format_ok == Some(true));
            let base = adaptive_reward(r.mode, correct, alpha, cfg, bonus);
            let penalised = cfg.length_penalty_enabled
                && r.mode.is_long()
                && (correct || cfg.length_penalty_scope == LengthPenaltyScope::AllLong);
            let penalty = if penalised {
                length_penalty(r.length, &stats, cfg.length_hard_cap)
            } else {
                0.0
            };
            ShapedReward {
                total: base + penalty,
                base,
                length_penalty: penalty,
            }
        })
        .collect())
}
