//! End-to-end runs: training, held-out evaluation, metrics CSV and summaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::env::ToyPolicy;
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::rollout::PromptInstruction;
use crate::trainer::{evaluate, expected_thinking_rates, train_step, EvalReport, StepReport};

pub const METRICS_HEADER: &str =
    "step,split,accuracy,thinking_rate,avg_tokens,mean_reward,grpo_loss,rmsl_loss,alpha_mean";

/// Final evaluation of a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Uninstructed prompts: the policy picks its own mode.
    pub adaptive: EvalReport,
    /// Same policy with every prompt forced to long mode.
    pub long_only: EvalReport,
    /// Same policy with every prompt forced to short mode.
    pub short_only: EvalReport,
    /// Exact long-mode probabilities averaged over easy / hard classes.
    pub expected_thinking_easy: Option<f64>,
    pub expected_thinking_hard: Option<f64>,
}

pub fn evaluate_policy(policy: &ToyPolicy, cfg: &RunConfig) -> Result<EvalSummary> {
    let eval = |instruction| {
        evaluate(
            policy,
            &cfg.task,
            cfg.seed,
            cfg.eval_samples_per_class,
            instruction,
        )
    };
    let (easy, hard) = expected_thinking_rates(policy, &cfg.task);
    Ok(EvalSummary {
        adaptive: eval(PromptInstruction::Uninstructed)?,
        long_only: eval(PromptInstruction::LongInstructed)?,
        short_only: eval(PromptInstruction::ShortInstructed)?,
        expected_thinking_easy: easy,
        expected_thinking_hard: hard,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub steps: Vec<StepReport>,
    pub eval: EvalSummary,
    pub policy: ToyPolicy,
}

/// Writes the metrics CSV one row at a time.
pub struct MetricsWriter<W: Write> {
    out: W,
}

fn metric_cells(m: &MetricsRow) -> String {
    format!("{},{},{}", m.accuracy, m.thinking_rate, m.avg_tokens)
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(MetricsWriter { out })
    }

    pub fn step(&mut self, r: &StepReport) -> Result<()> {
        for (split, row) in [("train_easy", &r.easy), ("train_hard", &r.hard)] {
            if let Some(m) = row {
                writeln!(
                    self.out,
                    "{},{split},{},{},{},{},{}",
                    r.step,
                    metric_cells(m),
                    r.mean_reward,
                    r.grpo_loss,
                    r.rmsl_loss,
                    r.alpha_mean
                )?;
            }
        }
        Ok(())
    }

    /// Evaluation rows carry no loss columns.
    pub fn eval(&mut self, step: u64, e: &EvalReport) -> Result<()> {
        let rows = [
            ("eval_easy", e.easy.as_ref()),
            ("eval_hard", e.hard.as_ref()),
            ("eval_all", Some(&e.all)),
        ];
        for (split, row) in rows {
            if let Some(m) = row {
                writeln!(self.out, "{step},{split},{},,,,", metric_cells(m))?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Train from the configured warm start for `cfg.total_steps` steps, invoking `on_step`
/// after each one.
pub fn train(
    cfg: &RunConfig,
    mut on_step: impl FnMut(&StepReport, &ToyPolicy) -> Result<()>,
) -> Result<(ToyPolicy, Vec<StepReport>)> {
    let mut policy = ToyPolicy::warm_start(&cfg.task, &cfg.init);
    let mut reports = Vec::with_capacity(cfg.total_steps as usize);
    for step in 0..cfg.total_steps {
        let (next, report) = train_step(&policy, &cfg.task, cfg, step)?;
        policy = next;
        on_step(&report, &policy)?;
        reports.push(report);
    }
    Ok((policy, reports))
}

/// Full run: train, evaluate on uninstructed prompts, and write the metrics
/// CSV, policy checkpoint and JSON summary under `cfg.output.dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics_path = cfg.output.metrics_path();
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = MetricsWriter::new(BufWriter::new(file))?;

    let (policy, steps) = train(cfg, |r, _| metrics.step(r))?;
    let eval = evaluate_policy(&policy, cfg)?;
    metrics.eval(cfg.total_steps, &eval.adaptive)?;
    metrics.finish()?;

    checkpoint::save(cfg.output.policy_path(), &policy, &cfg.task)?;
    let summary_path = cfg.output.summary_path();
    let json = serde_json::to_string_pretty(&eval).expect("summary serializes");
    std::fs::write(&summary_path, json + "\n").map_err(|e| Error::io(&summary_path, e))?;

    Ok(ExperimentReport {
        steps,
        eval,
        policy,
    })
}

/// One parsed metrics CSV row. Loss columns are absent on evaluation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub split: String,
    pub metrics: MetricsRow,
    pub mean_reward: Option<f64>,
    pub grpo_loss: Option<f64>,
    pub rmsl_loss: Option<f64>,
    pub alpha_mean: Option<f64>,
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == METRICS_HEADER => {}
        _ => {
            return Err(Error::InvalidInput(format!(
                "{}: missing metrics header",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 {
            return Err(Error::Record {
                line: n,
                message: format!("expected 9 columns, found {}", cells.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Record {
                line: n,
                message: format!("bad number `{s}`"),
            })
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        out.push(MetricsRecord {
            step: cells[0].parse().map_err(|_| Error::Record {
                line: n,
                message: "bad step".into(),
            })?,
            split: cells[1].to_string(),
            metrics: MetricsRow {
                accuracy: num(cells[2])?,
                thinking_rate: num(cells[3])?,
                avg_tokens: num(cells[4])?,
            },
            mean_reward: opt(cells[5])?,
            grpo_loss: opt(cells[6])?,
            rmsl_loss: opt(cells[7])?,
            alpha_mean: opt(cells[8])?,
        });
    }
    Ok(out)
}

/// Human-readable per-difficulty summary of a metrics file: the final
/// evaluation rows when present, otherwise the mean of the last `window`
/// training rows of each split.
pub fn summarize(records: &[MetricsRecord], window: usize) -> String {
    let mut s = String::new();
    let eval: Vec<&MetricsRecord> = records
        .iter()
        .filter(|r| r.split.starts_with("eval_"))
        .collect();
    if !eval.is_empty() {
        s.push_str("evaluation (uninstructed prompts)\n");
        for r in eval {
            s.push_str(&format!(
                "  {:<10} accuracy {:.3}  thinking_rate {:.3}  avg_tokens {:.1}\n",
                r.split.trim_start_matches("eval_"),
                r.metrics.accuracy,
                r.metrics.thinking_rate,
                r.metrics.avg_tokens
            ));
        }
    }
    for split in ["train_easy", "train_hard"] {
        let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.split == split).collect();
        if rows.is_empty() {
            continue;
        }
        let tail = &rows[rows.len().saturating_sub(window.max(1))..];
        let n = tail.len() as f64;
        let mean = |f: fn(&MetricsRecord) -> f64| tail.iter().map(|r| f(r)).sum::<f64>() / n;
        s.push_str(&format!(
            "{split} (last {} steps): accuracy {:.3}  thinking_rate {:.3}  avg_tokens {:.1}\n",
            tail.len(),
            mean(|r| r.metrics.accuracy),
            mean(|r| r.metrics.thinking_rate),
            mean(|r| r.metrics.avg_tokens)
        ));
    }
    s
}

/// Wide CSV for plotting: one row per training step with easy and hard
/// columns side by side.
pub fn plot_csv(records: &[MetricsRecord]) -> String {
    use std::collections::BTreeMap;
    let mut by_step: BTreeMap<u64, [Option<MetricsRow>; 2]> = BTreeMap::new();
    for r in records {
        let slot = match r.split.as_str() {
            "train_easy" => 0,
            "train_hard" => 1,
            _ => continue,
        };
        by_step.entry(r.step).or_default()[slot] = Some(r.metrics);
    }
    let cell = |m: &Option<MetricsRow>, f: fn(&MetricsRow) -> f64| {
        m.as_ref().map(|m| f(m).to_string()).unwrap_or_default()
    };
    let mut s = String::from("step,easy_accuracy,easy_thinking_rate,easy_avg_tokens,hard_accuracy,hard_thinking_rate,hard_avg_tokens\n");
    for (step, [e, h]) in by_step {
        s.push_str(&format!(
            "{step},{},{},{},{},{},{}\n",
            cell(&e, |m| m.accuracy),
            cell(&e, |m| m.thinking_rate),
            cell(&e, |m| m.avg_tokens),
            cell(&h, |m| m.accuracy),
            cell(&h, |m| m.thinking_rate),
            cell(&h, |m| m.avg_tokens),
        ));
    }
    s
}
