//! Offline reward shaping over line-delimited JSON rollout logs.
//!
//! Each input line is one response:
//!
//! ```json
//! {"prompt_id": "q17", "mode": "long", "correct": true, "format_ok": true, "length": 812}
//! ```
//!
//! `prompt_id` may be a string or an integer. Optional `tokens` and
//! `old_logprobs` arrays are validated against `length` and passed through.
//! Any other keys are passed through untouched. Records of one prompt must be
//! contiguous and contain equally many long and short responses.
//!
//! Each output line is the input object, in its original key order, with four
//! keys appended: `reward_base`, `length_penalty`, `reward_total` and
//! `advantage`.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grpo::{group_advantages, OptimizerConfig};
use crate::reward::{shape_group, ShapingConfig};
use crate::rollout::{make_group, PromptId, ReasoningMode, RolloutResponse};

struct Parsed {
    object: Map<String, Value>,
    response: RolloutResponse,
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, line: usize) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::Record {
        line,
        message: format!("missing field `{name}`"),
    })
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Record {
        line,
        message: message.into(),
    }
}

fn parse_record(text: &str, line: usize) -> Result<Parsed> {
    let object: Map<String, Value> =
        serde_json::from_str(text).map_err(|e| bad(line, format!("malformed record: {e}")))?;

    let prompt_id = match field(&object, "prompt_id", line)? {
        Value::String(s) => PromptId(s.clone()),
        Value::Number(n) if n.is_u64() || n.is_i64() => PromptId(n.to_string()),
        _ => return Err(bad(line, "`prompt_id` must be a string or an integer")),
    };
    let mode = match field(&object, "mode", line)?.as_str() {
        Some("long") => ReasoningMode::Long,
        Some("short") => ReasoningMode::Short,
        _ => return Err(bad(line, "`mode` must be \"long\" or \"short\"")),
    };
    let flag = |name: &str| -> Result<bool> {
        field(&object, name, line)?
            .as_bool()
            .ok_or_else(|| bad(line, format!("`{name}` must be a boolean")))
    };
    let correct = flag("correct")?;
    let format_ok = flag("format_ok")?;
    let length = field(&object, "length", line)?
        .as_u64()
        .filter(|&n| n > 0)
        .ok_or_else(|| bad(line, "`length` must be a positive integer"))? as usize;

    let mut response = RolloutResponse::summary(prompt_id, mode, length, correct, format_ok);
    if let Some(v) = object.get("tokens") {
        let tokens = v
            .as_array()
            .and_then(|a| {
                a.iter()
                    .map(|t| t.as_u64().and_then(|t| u32::try_from(t).ok()))
                    .collect::<Option<Vec<_>>>()
            })
            .ok_or_else(|| bad(line, "`tokens` must be an array of token ids"))?;
        if tokens.len() != length {
            return Err(bad(
                line,
                format!(
                    "`tokens` has {} entries but `length` is {length}",
                    tokens.len()
                ),
            ));
        }
        response.tokens = tokens;
    }
    if let Some(v) = object.get("old_logprobs") {
        let lps = v
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| bad(line, "`old_logprobs` must be an array of numbers"))?;
        if lps.len() != length {
            return Err(bad(
                line,
                format!(
                    "`old_logprobs` has {} entries but `length` is {length}",
                    lps.len()
                ),
            ));
        }
        response.old_logprobs = lps;
    }
    Ok(Parsed { object, response })
}

fn flush<W: Write>(
    pending: &mut Vec<Parsed>,
    shaping: &ShapingConfig,
    optimizer: &OptimizerConfig,
    step: u64,
    out: &mut W,
) -> Result<usize> {
    if pending.is_empty() {
        return Ok(0);
    }
    let prompt_id = pending[0].response.prompt_id.clone();
    let (long_idx, short_idx): (Vec<usize>, Vec<usize>) =
        (0..pending.len()).partition(|&i| pending[i].response.mode.is_long());
    let pick = |idx: &[usize]| {
        idx.iter()
            .map(|&i| pending[i].response.clone())
            .collect::<Vec<_>>()
    };
    let group = make_group(pick(&long_idx), pick(&short_idx)).map_err(|e| {
        Error::InvalidInput(format!("incomplete group for prompt {prompt_id}: {e}"))
    })?;

    let rewards = shape_group(&group, shaping, step)?;
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    let advantages = group_advantages(&totals, optimizer)?;

    // group position -> input position
    let order: Vec<usize> = long_idx.iter().chain(&short_idx).copied().collect();
    let mut shaped = vec![None; pending.len()];
    for (pos, &input) in order.iter().enumerate() {
        shaped[input] = Some((rewards[pos], advantages[pos]));
    }
    for (rec, s) in pending.drain(..).zip(shaped) {
        let (reward, adv) = s.expect("every record belongs to a half");
        let mut obj = rec.object;
        obj.insert("reward_base".into(), reward.base.into());
        obj.insert("length_penalty".into(), reward.length_penalty.into());
        obj.insert("reward_total".into(), reward.total.into());
        obj.insert("advantage".into(), adv.into());
        serde_json::to_writer(&mut *out, &obj).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(1)
}

/// Counts of what a shaping pass processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShapeSummary {
    pub records: usize,
    pub groups: usize,
}

/// Shape a rollout log in a single streaming pass.
pub fn shape_rollouts<R: BufRead, W: Write>(
    input: R,
    output: &mut W,
    shaping: &ShapingConfig,
    optimizer: &OptimizerConfig,
    step: u64,
) -> Result<ShapeSummary> {
    let mut summary = ShapeSummary::default();
    let mut pending: Vec<Parsed> = Vec::new();
    let mut finished: HashSet<PromptId> = HashSet::new();

    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&text, line_no)?;
        let same = pending
            .first()
            .is_some_and(|p| p.response.prompt_id == rec.response.prompt_id);
        if !same {
            if let Some(first) = pending.first() {
                finished.insert(first.response.prompt_id.clone());
            }
            summary.groups += flush(&mut pending, shaping, optimizer, step, output)?;
            if finished.contains(&rec.response.prompt_id) {
                return Err(bad(
                    line_no,
                    format!(
                        "records of prompt {} are not contiguous",
                        rec.response.prompt_id
                    ),
                ));
            }
        }
        pending.push(rec);
        summary.records += 1;
    }
    summary.groups += flush(&mut pending, shaping, optimizer, step, output)?;
    output.flush()?;
    Ok(summary)
}
