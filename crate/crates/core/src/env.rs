//! Synthetic reasoning environment and a small softmax policy over it.
//!
//! Each prompt belongs to one of `C` classes with a fixed answer token. Long
//! mode sees the class itself; short mode only sees the class's alias group,
//! so classes sharing a group cannot be told apart without long reasoning.
//! Singleton groups are "easy", multi-class groups are "hard".
//!
//! Token id layout for a task with `S` short-start tokens and `A` answers:
//!
//! | ids                | meaning                      |
//! |--------------------|------------------------------|
//! | `0`                | long marker (opens thinking) |
//! | `1 ..= S`          | short-start tokens           |
//! | `S + 1`            | end-of-thinking marker       |
//! | `S + 2`            | filler                       |
//! | `S + 3 ..`         | answer tokens                |
//!
//! The first generated token is always one of the `S + 1` ids in the first
//! block; that block is the vocabulary seen by the mode head.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::check_format;
use crate::rollout::{PromptInstruction, PromptRecord, ReasoningMode, RolloutResponse, TokenId};
use crate::switch_loss::softmax;

pub const LONG_MARKER: TokenId = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub answer_vocab: usize,
    #[serde(default = "default_short_starts")]
    pub short_start_tokens: usize,
    /// Correct answer index per class.
    pub targets: Vec<usize>,
    /// Partition of the classes; short mode observes only the group index.
    pub alias_groups: Vec<Vec<usize>>,
    /// Inclusive filler-length range for long responses.
    pub long_len_range: [usize; 2],
    /// Inclusive filler-length range for short responses.
    pub short_len_range: [usize; 2],
}

fn default_short_starts() -> usize {
    3
}

impl Default for SyntheticTask {
    /// Four easy singleton classes and four hard classes aliased in pairs.
    fn default() -> Self {
        SyntheticTask {
            num_classes: 8,
            answer_vocab: 8,
            short_start_tokens: default_short_starts(),
            targets: (0..8).collect(),
            alias_groups: vec![vec![0], vec![1], vec![2], vec![3], vec![4, 5], vec![6, 7]],
            long_len_range: [24, 48],
            short_len_range: [4, 12],
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c == 0 || self.answer_vocab == 0 || self.short_start_tokens == 0 {
            return Err(Error::Config(
                "task.num_classes, task.answer_vocab and task.short_start_tokens must be positive"
                    .into(),
            ));
        }
        if self.targets.len() != c {
            return Err(Error::Config(format!(
                "task.targets has {} entries for {c} classes",
                self.targets.len()
            )));
        }
        if let Some(t) = self.targets.iter().find(|&&t| t >= self.answer_vocab) {
            return Err(Error::Config(format!(
                "task target {t} outside answer vocabulary {}",
                self.answer_vocab
            )));
        }
        let mut seen = vec![false; c];
        for g in &self.alias_groups {
            if g.is_empty() {
                return Err(Error::Config(
                    "task.alias_groups contains an empty group".into(),
                ));
            }
            for &k in g {
                if k >= c || std::mem::replace(&mut seen[k], true) {
                    return Err(Error::Config(format!(
                        "task.alias_groups: class {k} out of range or repeated"
                    )));
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "task.alias_groups does not cover class {k}"
            )));
        }
        let [ll, lh] = self.long_len_range;
        let [sl, sh] = self.short_len_range;
        if ll > lh || sl > sh || sl == 0 {
            return Err(Error::Config(
                "task length ranges must be non-empty with positive bounds".into(),
            ));
        }
        if ll < sh {
            return Err(Error::Config(format!(
                "task.long_len_range minimum {ll} is below task.short_len_range maximum {sh}"
            )));
        }
        Ok(())
    }

    pub fn first_token_vocab(&self) -> usize {
        self.short_start_tokens + 1
    }

    pub fn end_marker(&self) -> TokenId {
        (self.short_start_tokens + 1) as TokenId
    }

    pub fn filler(&self) -> TokenId {
        (self.short_start_tokens + 2) as TokenId
    }

    pub fn answer_token(&self, answer: usize) -> TokenId {
        (self.short_start_tokens + 3 + answer) as TokenId
    }

    pub fn long_marker_ids(&self) -> HashSet<TokenId> {
        [LONG_MARKER].into()
    }

    pub fn end_marker_ids(&self) -> HashSet<TokenId> {
        [self.end_marker()].into()
    }

    /// Index of the alias group containing `class`.
    pub fn group_of(&self, class: usize) -> usize {
        self.alias_groups
            .iter()
            .position(|g| g.contains(&class))
            .expect("validated task covers every class")
    }

    pub fn is_hard(&self, class: usize) -> bool {
        self.alias_groups[self.group_of(class)].len() > 1
    }

    /// FNV-1a over the canonical JSON form; stamped into checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("task serializes");
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// Best expected accuracy any policy can reach on `class` in `mode`.
///
/// Short mode answers from the alias group alone, so every class in a group
/// shares one answer distribution. Accuracy is linear in that distribution,
/// so the optimum is attained by a deterministic answer; this enumerates all
/// of them and returns the best group-average accuracy.
pub fn oracle_accuracy(task: &SyntheticTask, mode: ReasoningMode, class_index: usize) -> f64 {
    if mode.is_long() {
        return 1.0;
    }
    let group = &task.alias_groups[task.group_of(class_index)];
    (0..task.answer_vocab)
        .map(|a| group.iter().filter(|&&k| task.targets[k] == a).count())
        .max()
        .unwrap_or(0) as f64
        / group.len() as f64
}

/// Initial logits for a policy that already has both reasoning abilities,
/// standing in for a supervised warm start before reinforcement learning.
///
/// Each value is added to the logit of the relevant correct token; all other
/// logits start at zero. For a short head shared by an alias group, every
/// member's target receives `short_answer_logit`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStart {
    pub long_mode_logit: f64,
    pub long_answer_logit: f64,
    pub short_answer_logit: f64,
}

impl WarmStart {
    pub fn validate(&self) -> Result<()> {
        if [
            self.long_mode_logit,
            self.long_answer_logit,
            self.short_answer_logit,
        ]
        .iter()
        .any(|v| !v.is_finite())
        {
            return Err(Error::Config("init logits must be finite".into()));
        }
        Ok(())
    }
}

/// Linear-softmax policy with three heads stored in one parameter vector:
/// per-class first-token logits, per-class long-mode answer logits and
/// per-alias-group short-mode answer logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    params: Vec<f64>,
    num_classes: usize,
    num_groups: usize,
    first_vocab: usize,
    answer_vocab: usize,
}

impl ToyPolicy {
    pub fn zeros(task: &SyntheticTask) -> Self {
        let mut p = ToyPolicy {
            params: Vec::new(),
            num_classes: task.num_classes,
            num_groups: task.alias_groups.len(),
            first_vocab: task.first_token_vocab(),
            answer_vocab: task.answer_vocab,
        };
        p.params = vec![0.0; p.expected_len()];
        p
    }

    pub fn warm_start(task: &SyntheticTask, init: &WarmStart) -> Self {
        let mut p = ToyPolicy::zeros(task);
        for class in 0..task.num_classes {
            p.mode_logits_mut(class)[LONG_MARKER as usize] += init.long_mode_logit;
            p.long_answer_logits_mut(class)[task.targets[class]] += init.long_answer_logit;
        }
        for (g, members) in task.alias_groups.iter().enumerate() {
            let mut targets: Vec<usize> = members.iter().map(|&k| task.targets[k]).collect();
            targets.dedup();
            for t in targets {
                p.short_answer_logits_mut(g)[t] += init.short_answer_logit;
            }
        }
        p
    }

    pub fn from_params(task: &SyntheticTask, params: Vec<f64>) -> Result<Self> {
        let mut p = ToyPolicy::zeros(task);
        if params.len() != p.params.len() {
            return Err(Error::InvalidInput(format!(
                "policy for this task has {} parameters, got {}",
                p.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "policy parameters must be finite".into(),
            ));
        }
        p.params = params;
        Ok(p)
    }

    fn expected_len(&self) -> usize {
        self.num_classes * self.first_vocab
            + self.num_classes * self.answer_vocab
            + self.num_groups * self.answer_vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn mode_offset(&self, class: usize) -> usize {
        class * self.first_vocab
    }

    fn long_answer_offset(&self, class: usize) -> usize {
        self.num_classes * self.first_vocab + class * self.answer_vocab
    }

    fn short_answer_offset(&self, group: usize) -> usize {
        self.num_classes * (self.first_vocab + self.answer_vocab) + group * self.answer_vocab
    }

    pub fn mode_logits_mut(&mut self, class: usize) -> &mut [f64] {
        let o = self.mode_offset(class);
        &mut self.params[o..o + self.first_vocab]
    }

    pub fn mode_probs(&self, class: usize) -> Vec<f64> {
        let o = self.mode_offset(class);
        softmax(&self.params[o..o + self.first_vocab])
    }

    pub fn long_answer_logits_mut(&mut self, class: usize) -> &mut [f64] {
        let o = self.long_answer_offset(class);
        &mut self.params[o..o + self.answer_vocab]
    }

    pub fn short_answer_logits_mut(&mut self, group: usize) -> &mut [f64] {
        let o = self.short_answer_offset(group);
        &mut self.params[o..o + self.answer_vocab]
    }

    /// Answer distribution and its parameter offset for `class` in `mode`.
    fn answer_head(
        &self,
        task: &SyntheticTask,
        class: usize,
        mode: ReasoningMode,
    ) -> (usize, Vec<f64>) {
        let o = match mode {
            ReasoningMode::Long => self.long_answer_offset(class),
            ReasoningMode::Short => self.short_answer_offset(task.group_of(class)),
        };
        (o, softmax(&self.params[o..o + self.answer_vocab]))
    }

    pub fn answer_probs(
        &self,
        task: &SyntheticTask,
        class: usize,
        mode: ReasoningMode,
    ) -> Vec<f64> {
        self.answer_head(task, class, mode).1
    }

    /// Probability that an uninstructed prompt of `class` opens in long mode.
    pub fn long_probability(&self, class: usize) -> f64 {
        self.mode_probs(class)[LONG_MARKER as usize]
    }

    /// Exact expected accuracy of an uninstructed prompt of `class`.
    pub fn expected_accuracy(&self, task: &SyntheticTask, class: usize) -> f64 {
        let target = task.targets[class];
        let p_long = self.long_probability(class);
        p_long * self.answer_probs(task, class, ReasoningMode::Long)[target]
            + (1.0 - p_long) * self.answer_probs(task, class, ReasoningMode::Short)[target]
    }

    /// Log-probability of each token of `response` under this policy.
    /// Deterministic tokens score zero.
    pub fn token_logprobs(
        &self,
        task: &SyntheticTask,
        prompt: &PromptRecord,
        response: &RolloutResponse,
    ) -> Vec<f64> {
        let mut out = vec![0.0; response.tokens.len()];
        if prompt.instruction == PromptInstruction::Uninstructed {
            let first = response.tokens[0] as usize;
            out[0] = self.mode_probs(prompt.class_index)[first].ln();
        }
        let last = response.tokens.len() - 1;
        let answer = (response.tokens[last] - task.answer_token(0)) as usize;
        let (_, probs) = self.answer_head(task, prompt.class_index, response.mode);
        out[last] = probs[answer].ln();
        out
    }

    /// Add `d loss / d params` into `grad`, given `d loss / d logprob` for each
    /// token of `response`.
    pub fn accumulate_logprob_grad(
        &self,
        task: &SyntheticTask,
        prompt: &PromptRecord,
        response: &RolloutResponse,
        token_grad: &[f64],
        grad: &mut [f64],
    ) {
        let mut push = |offset: usize, probs: &[f64], chosen: usize, g: f64| {
            if g == 0.0 {
                return;
            }
            for (j, p) in probs.iter().enumerate() {
                let onehot = if j == chosen { 1.0 } else { 0.0 };
                grad[offset + j] += g * (onehot - p);
            }
        };
        if prompt.instruction == PromptInstruction::Uninstructed {
            let o = self.mode_offset(prompt.class_index);
            push(
                o,
                &self.mode_probs(prompt.class_index),
                response.tokens[0] as usize,
                token_grad[0],
            );
        }
        let last = response.tokens.len() - 1;
        let answer = (response.tokens[last] - task.answer_token(0)) as usize;
        let (o, probs) = self.answer_head(task, prompt.class_index, response.mode);
        push(o, &probs, answer, token_grad[last]);
    }

    /// Add a gradient over first-token logits of `class` into `grad`.
    pub fn accumulate_mode_logit_grad(&self, class: usize, logit_grad: &[f64], grad: &mut [f64]) {
        let o = self.mode_offset(class);
        for (g, d) in grad[o..o + self.first_vocab].iter_mut().zip(logit_grad) {
            *g += d;
        }
    }
}

/// First-token distribution of the uninstructed prompt form of `prompt`'s class.
pub fn first_token_distribution(policy: &ToyPolicy, prompt: &PromptRecord) -> Vec<f64> {
    policy.mode_probs(prompt.class_index)
}

/// Plain gradient descent step.
pub fn apply_gradient(
    policy: &ToyPolicy,
    gradient: &[f64],
    learning_rate: f64,
) -> Result<ToyPolicy> {
    if gradient.len() != policy.params.len() {
        return Err(Error::InvalidInput(format!(
            "gradient has {} entries for {} parameters",
            gradient.len(),
            policy.params.len()
        )));
    }
    let mut next = policy.clone();
    for (p, g) in next.params.iter_mut().zip(gradient) {
        *p -= learning_rate * g;
    }
    Ok(next)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last non-zero entry
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Sample one judged trajectory for `prompt`.
pub fn sample_response<R: Rng + ?Sized>(
    policy: &ToyPolicy,
    prompt: &PromptRecord,
    task: &SyntheticTask,
    rng: &mut R,
) -> RolloutResponse {
    let class = prompt.class_index;
    let (first, first_lp, mode) = match prompt.instruction.forced_mode() {
        Some(ReasoningMode::Long) => (LONG_MARKER, 0.0, ReasoningMode::Long),
        Some(ReasoningMode::Short) => (1, 0.0, ReasoningMode::Short),
        None => {
            let probs = policy.mode_probs(class);
            let t = sample_index(&probs, rng);
            let mode = if t as TokenId == LONG_MARKER {
                ReasoningMode::Long
            } else {
                ReasoningMode::Short
            };
            (t as TokenId, probs[t].ln(), mode)
        }
    };
    let [lo, hi] = match mode {
        ReasoningMode::Long => task.long_len_range,
        ReasoningMode::Short => task.short_len_range,
    };
    let filler = rng.gen_range(lo..=hi);

    let mut tokens = Vec::with_capacity(filler + 3);
    tokens.push(first);
    tokens.extend(std::iter::repeat_n(task.filler(), filler));
    if mode.is_long() {
        tokens.push(task.end_marker());
    }
    let answer_probs = policy.answer_probs(task, class, mode);
    let answer = sample_index(&answer_probs, rng);
    tokens.push(task.answer_token(answer));

    let mut logprobs = vec![0.0; tokens.len()];
    logprobs[0] = first_lp;
    *logprobs.last_mut().expect("non-empty") = answer_probs[answer].ln();

    let response = RolloutResponse::from_tokens(prompt.id.clone(), mode, tokens, logprobs)
        .expect("sampled tokens and log-probabilities align");
    let format_ok = check_format(&response, &task.long_marker_ids(), &task.end_marker_ids());
    response.with_outcome(answer == task.targets[class], format_ok)
}
