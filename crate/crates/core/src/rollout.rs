//! Rollout data model: prompts, sampled responses and mode-balanced groups.
//!
//! A [`RolloutGroup`] always stores its long-mode responses first and its
//! short-mode responses second, split exactly at `G / 2`. Everything else in
//! the crate addresses responses by mode; the split point is the only place
//! raw positions carry meaning.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Which reasoning style a response uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningMode {
    Long,
    Short,
}

impl ReasoningMode {
    pub fn is_long(self) -> bool {
        matches!(self, ReasoningMode::Long)
    }
}

impl fmt::Display for ReasoningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReasoningMode::Long => "long",
            ReasoningMode::Short => "short",
        })
    }
}

/// Instruction prefix attached to a prompt at sampling time.
///
/// The two instructed forms force the reasoning mode; `Uninstructed` leaves
/// the choice to the policy's first token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptInstruction {
    LongInstructed,
    ShortInstructed,
    Uninstructed,
}

impl PromptInstruction {
    /// The mode this instruction forces, if any.
    pub fn forced_mode(self) -> Option<ReasoningMode> {
        match self {
            PromptInstruction::LongInstructed => Some(ReasoningMode::Long),
            PromptInstruction::ShortInstructed => Some(ReasoningMode::Short),
            PromptInstruction::Uninstructed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub String);

impl From<u64> for PromptId {
    fn from(v: u64) -> Self {
        PromptId(v.to_string())
    }
}

impl From<&str> for PromptId {
    fn from(v: &str) -> Self {
        PromptId(v.to_owned())
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: PromptId,
    pub class_index: usize,
    pub instruction: PromptInstruction,
}

/// One sampled trajectory.
///
/// `tokens` and `old_logprobs` may be empty for summary records read from a
/// rollout log that only carries lengths; when present they hold exactly
/// `length` entries. `correct` and `format_ok` are `None` until judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub prompt_id: PromptId,
    pub mode: ReasoningMode,
    pub tokens: Vec<TokenId>,
    pub length: usize,
    pub correct: Option<bool>,
    pub format_ok: Option<bool>,
    pub old_logprobs: Vec<f64>,
    pub shaped_reward: Option<f64>,
}

impl RolloutResponse {
    /// A full trajectory with per-token sampling log-probabilities.
    pub fn from_tokens(
        prompt_id: PromptId,
        mode: ReasoningMode,
        tokens: Vec<TokenId>,
        old_logprobs: Vec<f64>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("response has no tokens".into()));
        }
        if old_logprobs.len() != tokens.len() {
            return Err(Error::InvalidInput(format!(
                "{} log-probabilities for {} tokens",
                old_logprobs.len(),
                tokens.len()
            )));
        }
        Ok(RolloutResponse {
            prompt_id,
            mode,
            length: tokens.len(),
            tokens,
            correct: None,
            format_ok: None,
            old_logprobs,
            shaped_reward: None,
        })
    }

    /// A token-less record carrying only what reward shaping needs.
    pub fn summary(
        prompt_id: PromptId,
        mode: ReasoningMode,
        length: usize,
        correct: bool,
        format_ok: bool,
    ) -> Self {
        RolloutResponse {
            prompt_id,
            mode,
            tokens: Vec::new(),
            length,
            correct: Some(correct),
            format_ok: Some(format_ok),
            old_logprobs: Vec::new(),
            shaped_reward: None,
        }
    }

    pub fn with_outcome(mut self, correct: bool, format_ok: bool) -> Self {
        self.correct = Some(correct);
        self.format_ok = Some(format_ok);
        self
    }

    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }

    fn check_shape(&self) -> std::result::Result<(), String> {
        if self.length == 0 {
            return Err("zero length".into());
        }
        if !self.tokens.is_empty() && self.tokens.len() != self.length {
            return Err(format!(
                "length {} but {} tokens",
                self.length,
                self.tokens.len()
            ));
        }
        if !self.old_logprobs.is_empty() && self.old_logprobs.len() != self.length {
            return Err(format!(
                "length {} but {} log-probabilities",
                self.length,
                self.old_logprobs.len()
            ));
        }
        if let Some(r) = self.shaped_reward {
            if !r.is_finite() {
                return Err("non-finite shaped reward".into());
            }
        }
        Ok(())
    }
}

/// The `G` responses sampled for one prompt, long half first.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    prompt_id: PromptId,
    responses: Vec<RolloutResponse>,
}

impl RolloutGroup {
    pub fn prompt_id(&self) -> &PromptId {
        &self.prompt_id
    }

    pub fn responses(&self) -> &[RolloutResponse] {
        &self.responses
    }

    pub fn into_responses(self) -> Vec<RolloutResponse> {
        self.responses
    }

    /// Group size `G`.
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Index of the first short response, `G / 2`.
    pub fn split(&self) -> usize {
        self.responses.len() / 2
    }

    pub fn long_half(&self) -> &[RolloutResponse] {
        &self.responses[..self.split()]
    }

    pub fn short_half(&self) -> &[RolloutResponse] {
        &self.responses[self.split()..]
    }
}

/// Assemble a group from equally sized long and short response lists.
pub fn make_group(long: Vec<RolloutResponse>, short: Vec<RolloutResponse>) -> Result<RolloutGroup> {
    if long.is_empty() || short.is_empty() {
        return Err(Error::Group(format!(
            "both halves must be non-empty (got {} long, {} short)",
            long.len(),
            short.len()
        )));
    }
    if long.len() != short.len() {
        return Err(Error::Group(format!(
            "length mismatch: {} long vs {} short",
            long.len(),
            short.len()
        )));
    }
    let prompt_id = long[0].prompt_id.clone();
    for (half, expected, list) in [
        ("long", ReasoningMode::Long, &long),
        ("short", ReasoningMode::Short, &short),
    ] {
        for (i, r) in list.iter().enumerate() {
            if r.mode != expected {
                return Err(Error::Group(format!(
                    "mode mismatch at {half}[{i}]: expected {expected}, found {}",
                    r.mode
                )));
            }
            if r.prompt_id != prompt_id {
                return Err(Error::Group(format!(
                    "prompt-id mismatch at {half}[{i}]: expected {prompt_id}, found {}",
                    r.prompt_id
                )));
            }
            r.check_shape()
                .map_err(|m| Error::Group(format!("malformed response at {half}[{i}]: {m}")))?;
        }
    }
    let mut responses = long;
    responses.extend(short);
    Ok(RolloutGroup {
        prompt_id,
        responses,
    })
}

/// Fraction of the short half judged correct.
pub fn short_accuracy(group: &RolloutGroup) -> f64 {
    let short = group.short_half();
    let hits = short.iter().filter(|r| r.is_correct()).count();
    hits as f64 / short.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(id: &str, mode: ReasoningMode, correct: bool) -> RolloutResponse {
        RolloutResponse::summary(id.into(), mode, 4, correct, true)
    }

    fn halves(n_long: usize, n_short: usize) -> (Vec<RolloutResponse>, Vec<RolloutResponse>) {
        (
            (0..n_long)
                .map(|_| resp("p", ReasoningMode::Long, true))
                .collect(),
            (0..n_short)
                .map(|_| resp("p", ReasoningMode::Short, true))
                .collect(),
        )
    }

    #[test]
    fn sixteen_way_group_splits_at_eight() {
        let (l, s) = halves(8, 8);
        let g = make_group(l, s).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.split(), 8);
        for (i, r) in g.responses().iter().enumerate() {
            assert_eq!(r.mode.is_long(), i < 8);
        }
    }

    #[test]
    fn minimal_group() {
        let (l, s) = halves(1, 1);
        assert_eq!(make_group(l, s).unwrap().len(), 2);
    }

    #[test]
    fn unequal_halves_rejected() {
        let (l, s) = halves(3, 4);
        let err = make_group(l, s).unwrap_err().to_string();
        assert!(err.contains("length mismatch"), "{err}");
    }

    #[test]
    fn wrong_mode_names_index() {
        let (l, mut s) = halves(2, 2);
        s[1].mode = ReasoningMode::Long;
        let err = make_group(l, s).unwrap_err().to_string();
        assert!(err.contains("mode mismatch at short[1]"), "{err}");
    }

    #[test]
    fn foreign_prompt_names_index() {
        let (mut l, s) = halves(3, 3);
        l[2].prompt_id = "q".into();
        let err = make_group(l, s).unwrap_err().to_string();
        assert!(err.contains("prompt-id mismatch at long[2]"), "{err}");
    }

    #[test]
    fn empty_halves_rejected() {
        assert!(make_group(vec![], vec![]).is_err());
    }

    #[test]
    fn token_count_must_match_length() {
        let (l, mut s) = halves(1, 1);
        s[0].tokens = vec![1, 2];
        let err = make_group(l, s).unwrap_err().to_string();
        assert!(err.contains("short[0]"), "{err}");
    }

    #[test]
    fn short_accuracy_counts_short_half_only() {
        let long = (0..4)
            .map(|_| resp("p", ReasoningMode::Long, false))
            .collect();
        let short = [true, false, true, true]
            .iter()
            .map(|&c| resp("p", ReasoningMode::Short, c))
            .collect();
        let g = make_group(long, short).unwrap();
        assert_eq!(short_accuracy(&g), 0.75);
    }

    #[test]
    fn short_accuracy_extremes() {
        let mk = |c: bool| {
            let long = (0..3).map(|_| resp("p", ReasoningMode::Long, !c)).collect();
            let short = (0..3).map(|_| resp("p", ReasoningMode::Short, c)).collect();
            make_group(long, short).unwrap()
        };
        assert_eq!(short_accuracy(&mk(true)), 1.0);
        assert_eq!(short_accuracy(&mk(false)), 0.0);
    }

    #[test]
    fn from_tokens_requires_aligned_logprobs() {
        assert!(RolloutResponse::from_tokens(
            "p".into(),
            ReasoningMode::Short,
            vec![1, 2],
            vec![0.0]
        )
        .is_err());
        assert!(
            RolloutResponse::from_tokens("p".into(), ReasoningMode::Short, vec![], vec![]).is_err()
        );
        let r = RolloutResponse::from_tokens(
            "p".into(),
            ReasoningMode::Short,
            vec![1, 2],
            vec![0.0, -0.5],
        )
        .unwrap();
        assert_eq!(r.length, 2);
    }
}
