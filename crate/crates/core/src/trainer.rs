//! Training loop: mode-balanced sampling, reward shaping, GRPO surrogate plus
//! mode switching loss, and one gradient step per batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{
    apply_gradient, first_token_distribution, sample_response, SyntheticTask, ToyPolicy,
};
use crate::error::{Error, Result};
use crate::grpo::{group_advantages, grpo_surrogate, total_loss, LossBundle};
use crate::metrics::{compute_metrics, MetricsRow};
use crate::reward::{shape_group, warmup_bonus, ShapedReward};
use crate::rollout::{
    make_group, short_accuracy, PromptInstruction, PromptRecord, RolloutGroup, RolloutResponse,
};
use crate::switch_loss::{mode_switch_loss, partition_first_token, softmax_backward};

const PROBE_STREAM: u64 = 0x9e37_79b9;
const EVAL_STREAM: u64 = 0x7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one sample, derived from the run seed, the
/// prompt and the sample index.
pub fn sample_rng(seed: u64, stream: u64, prompt: u64, sample: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ stream) ^ prompt) ^ sample;
    ChaCha8Rng::seed_from_u64(splitmix(key))
}

/// Per-step summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Uninstructed probe metrics on easy classes, if the task has any.
    pub easy: Option<MetricsRow>,
    pub hard: Option<MetricsRow>,
    pub mean_reward: f64,
    pub grpo_loss: f64,
    pub rmsl_loss: f64,
    pub alpha_mean: f64,
    /// Short-correct reward in effect on easy prompts this step.
    pub short_bonus: f64,
}

/// One prompt's sampled group with everything derived from it.
#[derive(Debug, Clone)]
pub struct ShapedGroup {
    pub prompt: PromptRecord,
    pub group: RolloutGroup,
    pub alpha: f64,
    pub rewards: Vec<ShapedReward>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub policy: ToyPolicy,
    pub report: StepReport,
    pub loss: LossBundle,
    pub groups: Vec<ShapedGroup>,
}

fn batch_prompts(cfg: &RunConfig, step: u64) -> Vec<(u64, usize)> {
    let n = cfg.batch_prompts as u64;
    (0..n)
        .map(|j| {
            let id = step * n + j;
            (id, (id % cfg.task.num_classes as u64) as usize)
        })
        .collect()
}

/// Sample the mode-balanced group for one prompt: `G/2` long-instructed then
/// `G/2` short-instructed responses.
pub fn sample_group(
    policy: &ToyPolicy,
    task: &SyntheticTask,
    cfg: &RunConfig,
    prompt_id: u64,
    class_index: usize,
) -> Result<RolloutGroup> {
    let half = cfg.group_size / 2;
    let draw = |instruction, offset: usize| -> Vec<RolloutResponse> {
        let prompt = PromptRecord {
            id: prompt_id.into(),
            class_index,
            instruction,
        };
        (0..half)
            .map(|i| {
                let mut rng = sample_rng(cfg.seed, 0, prompt_id, (offset + i) as u64);
                sample_response(policy, &prompt, task, &mut rng)
            })
            .collect()
    };
    make_group(
        draw(PromptInstruction::LongInstructed, 0),
        draw(PromptInstruction::ShortInstructed, half),
    )
}

fn instructed_prompt(group: &RolloutGroup, class_index: usize, index: usize) -> PromptRecord {
    let instruction = if index < group.split() {
        PromptInstruction::LongInstructed
    } else {
        PromptInstruction::ShortInstructed
    };
    PromptRecord {
        id: group.prompt_id().clone(),
        class_index,
        instruction,
    }
}

/// One optimisation step with full detail.
pub fn train_step_detailed(
    policy: &ToyPolicy,
    task: &SyntheticTask,
    cfg: &RunConfig,
    step: u64,
) -> Result<StepOutcome> {
    let prompts = batch_prompts(cfg, step);
    let n_params = policy.param_count();
    let mut gradient = vec![0.0; n_params];
    let (mut grpo_sum, mut rmsl_sum, mut alpha_sum, mut reward_sum, mut reward_n) =
        (0.0, 0.0, 0.0, 0.0, 0usize);
    let mut groups = Vec::with_capacity(prompts.len());
    let mut probes_easy = Vec::new();
    let mut probes_hard = Vec::new();

    for &(prompt_id, class) in &prompts {
        let group = sample_group(policy, task, cfg, prompt_id, class)?;
        let rewards = shape_group(&group, &cfg.shaping, step)?;
        let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
        let advantages = group_advantages(&totals, &cfg.optimizer)?;
        let alpha = short_accuracy(&group);

        let prompts_of: Vec<PromptRecord> = (0..group.len())
            .map(|i| instructed_prompt(&group, class, i))
            .collect();
        let fresh: Vec<Vec<f64>> = group
            .responses()
            .iter()
            .zip(&prompts_of)
            .map(|(r, p)| policy.token_logprobs(task, p, r))
            .collect();
        let surrogate = grpo_surrogate(&group, &advantages, &fresh, &cfg.optimizer)?;
        for ((r, p), g) in group
            .responses()
            .iter()
            .zip(&prompts_of)
            .zip(&surrogate.grad)
        {
            policy.accumulate_logprob_grad(task, p, r, g, &mut gradient);
        }

        let uninstructed = PromptRecord {
            id: prompt_id.into(),
            class_index: class,
            instruction: PromptInstruction::Uninstructed,
        };
        let probs = first_token_distribution(policy, &uninstructed);
        let partition = partition_first_token(&probs, &cfg.switch)?;
        let switch = mode_switch_loss(&partition, alpha, &cfg.switch);
        if cfg.optimizer.lambda > 0.0 {
            let logit_grad: Vec<f64> = softmax_backward(&probs, &switch.grad_probs)
                .into_iter()
                .map(|g| g * cfg.optimizer.lambda)
                .collect();
            policy.accumulate_mode_logit_grad(class, &logit_grad, &mut gradient);
        }

        let prompt_total = total_loss(surrogate.loss, switch.loss, &cfg.optimizer);
        if !prompt_total.is_finite() {
            return Err(Error::NonFinite {
                step,
                prompt_id: prompt_id.to_string(),
                detail: format!("grpo {} / rmsl {}", surrogate.loss, switch.loss),
            });
        }
        grpo_sum += surrogate.loss;
        rmsl_sum += switch.loss;
        alpha_sum += alpha;
        reward_sum += totals.iter().sum::<f64>();
        reward_n += totals.len();

        let probes = if task.is_hard(class) {
            &mut probes_hard
        } else {
            &mut probes_easy
        };
        for i in 0..cfg.probe_samples {
            let mut rng = sample_rng(cfg.seed, PROBE_STREAM, prompt_id, i as u64);
            probes.push(sample_response(policy, &uninstructed, task, &mut rng));
        }

        groups.push(ShapedGroup {
            prompt: PromptRecord {
                id: prompt_id.into(),
                class_index: class,
                instruction: PromptInstruction::Uninstructed,
            },
            group,
            alpha,
            rewards,
            advantages,
        });
    }

    let b = prompts.len() as f64;
    gradient.iter_mut().for_each(|g| *g /= b);
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step,
            prompt_id: "-".into(),
            detail: format!("gradient entry {i}"),
        });
    }
    let loss = LossBundle {
        grpo_loss: grpo_sum / b,
        rmsl_loss: rmsl_sum / b,
        total: total_loss(grpo_sum / b, rmsl_sum / b, &cfg.optimizer),
        gradient,
    };
    let next = apply_gradient(policy, &loss.gradient, cfg.learning_rate)?;
    let report = StepReport {
        step,
        easy: compute_metrics(&probes_easy).ok(),
        hard: compute_metrics(&probes_hard).ok(),
        mean_reward: reward_sum / reward_n as f64,
        grpo_loss: loss.grpo_loss,
        rmsl_loss: loss.rmsl_loss,
        alpha_mean: alpha_sum / b,
        short_bonus: warmup_bonus(step, &cfg.shaping),
    };
    Ok(StepOutcome {
        policy: next,
        report,
        loss,
        groups,
    })
}

pub fn train_step(
    policy: &ToyPolicy,
    task: &SyntheticTask,
    cfg: &RunConfig,
    step: u64,
) -> Result<(ToyPolicy, StepReport)> {
    let out = train_step_detailed(policy, task, cfg, step)?;
    Ok((out.policy, out.report))
}

/// Mean long-mode probability of uninstructed prompts over easy and hard
/// classes, computed exactly from the policy.
pub fn expected_thinking_rates(
    policy: &ToyPolicy,
    task: &SyntheticTask,
) -> (Option<f64>, Option<f64>) {
    let mean = |hard: bool| {
        let ps: Vec<f64> = (0..task.num_classes)
            .filter(|&c| task.is_hard(c) == hard)
            .map(|c| policy.long_probability(c))
            .collect();
        (!ps.is_empty()).then(|| ps.iter().sum::<f64>() / ps.len() as f64)
    };
    (mean(false), mean(true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub easy: Option<MetricsRow>,
    pub hard: Option<MetricsRow>,
    pub all: MetricsRow,
}

/// Sample `samples_per_class` responses per class under `instruction`.
pub fn evaluate(
    policy: &ToyPolicy,
    task: &SyntheticTask,
    seed: u64,
    samples_per_class: usize,
    instruction: PromptInstruction,
) -> Result<EvalReport> {
    let mut easy = Vec::new();
    let mut hard = Vec::new();
    for class in 0..task.num_classes {
        let prompt = PromptRecord {
            id: (class as u64).into(),
            class_index: class,
            instruction,
        };
        let bucket = if task.is_hard(class) {
            &mut hard
        } else {
            &mut easy
        };
        for i in 0..samples_per_class {
            let mut rng = sample_rng(
                seed,
                EVAL_STREAM ^ instruction as u64,
                class as u64,
                i as u64,
            );
            bucket.push(sample_response(policy, &prompt, task, &mut rng));
        }
    }
    let all: Vec<RolloutResponse> = easy.iter().chain(&hard).cloned().collect();
    Ok(EvalReport {
        easy: compute_metrics(&easy).ok(),
        hard: compute_metrics(&hard).ok(),
        all: compute_metrics(&all)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            total_steps: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_policy() {
        let cfg = RunConfig {
            learning_rate: 0.0,
            ..small()
        };
        let pol = ToyPolicy::zeros(&cfg.task);
        let (next, report) = train_step(&pol, &cfg.task, &cfg, 0).unwrap();
        assert_eq!(next, pol);
        assert_eq!(report.step, 0);
    }

    #[test]
    fn inert_losses_give_zero_gradient() {
        // every answer wrong -> equal rewards -> zero advantages; lambda = 0
        let mut cfg = small();
        cfg.optimizer.lambda = 0.0;
        let mut pol = ToyPolicy::zeros(&cfg.task);
        for c in 0..cfg.task.num_classes {
            let wrong = (cfg.task.targets[c] + 1) % cfg.task.answer_vocab;
            pol.long_answer_logits_mut(c)[wrong] = 60.0;
        }
        for g in 0..cfg.task.alias_groups.len() {
            let wrong = (cfg.task.targets[cfg.task.alias_groups[g][0]] + 3) % cfg.task.answer_vocab;
            pol.short_answer_logits_mut(g)[wrong] = 60.0;
        }
        let out = train_step_detailed(&pol, &cfg.task, &cfg, 0).unwrap();
        assert!(out
            .groups
            .iter()
            .all(|g| g.advantages.iter().all(|&a| a == 0.0)));
        assert!(out.loss.gradient.iter().all(|&g| g == 0.0));
        assert_eq!(out.policy, pol);
    }

    #[test]
    fn steps_are_deterministic() {
        let cfg = small();
        let pol = ToyPolicy::zeros(&cfg.task);
        let a = train_step(&pol, &cfg.task, &cfg, 5).unwrap();
        let b = train_step(&pol, &cfg.task, &cfg, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn groups_are_mode_balanced() {
        let cfg = small();
        let pol = ToyPolicy::zeros(&cfg.task);
        let g = sample_group(&pol, &cfg.task, &cfg, 3, 3).unwrap();
        assert_eq!(g.len(), 16);
        assert!(g.long_half().iter().all(|r| r.mode.is_long()));
        assert!(g.short_half().iter().all(|r| !r.mode.is_long()));
    }

    #[test]
    fn loss_bundle_is_consistent() {
        let cfg = small();
        let pol = ToyPolicy::zeros(&cfg.task);
        let out = train_step_detailed(&pol, &cfg.task, &cfg, 0).unwrap();
        let l = &out.loss;
        assert_eq!(l.total, l.grpo_loss + cfg.optimizer.lambda * l.rmsl_loss);
        assert_eq!(l.gradient.len(), pol.param_count());
    }

    #[test]
    fn eval_is_uninstructed_only() {
        let cfg = small();
        let mut pol = ToyPolicy::zeros(&cfg.task);
        for c in 0..8 {
            pol.mode_logits_mut(c)[0] = if c < 4 { -30.0 } else { 30.0 };
        }
        let r = evaluate(&pol, &cfg.task, 1, 50, PromptInstruction::Uninstructed).unwrap();
        assert_eq!(r.easy.unwrap().thinking_rate, 0.0);
        assert_eq!(r.hard.unwrap().thinking_rate, 1.0);
        assert_eq!(r.all.thinking_rate, 0.5);
    }
}
