//! Accuracy / thinking-rate / average-length triple.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::RolloutResponse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    /// Fraction of responses that used long-chain reasoning.
    pub thinking_rate: f64,
    pub avg_tokens: f64,
}

pub fn compute_metrics(responses: &[RolloutResponse]) -> Result<MetricsRow> {
    if responses.is_empty() {
        return Err(Error::InvalidInput(
            "cannot compute metrics of an empty response list".into(),
        ));
    }
    let n = responses.len() as f64;
    let correct = responses.iter().filter(|r| r.is_correct()).count() as f64;
    let long = responses.iter().filter(|r| r.mode.is_long()).count() as f64;
    let tokens: usize = responses.iter().map(|r| r.length).sum();
    Ok(MetricsRow {
        accuracy: correct / n,
        thinking_rate: long / n,
        avg_tokens: tokens as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::ReasoningMode;

    #[test]
    fn single_long_response() {
        let r = RolloutResponse::summary("a".into(), ReasoningMode::Long, 10, true, true);
        let m = compute_metrics(&[r]).unwrap();
        assert_eq!(
            m,
            MetricsRow {
                accuracy: 1.0,
                thinking_rate: 1.0,
                avg_tokens: 10.0
            }
        );
    }

    #[test]
    fn mixed_pair() {
        let rs = [
            RolloutResponse::summary("a".into(), ReasoningMode::Short, 4, true, true),
            RolloutResponse::summary("a".into(), ReasoningMode::Long, 8, false, true),
        ];
        let m = compute_metrics(&rs).unwrap();
        assert_eq!(
            m,
            MetricsRow {
                accuracy: 0.5,
                thinking_rate: 0.5,
                avg_tokens: 6.0
            }
        );
    }

    #[test]
    fn table_row_format() {
        // 80.0 / 0% / 731 as a row: 5 short responses, 4 correct, all 731 tokens.
        let rs: Vec<_> = (0..5)
            .map(|i| RolloutResponse::summary("a".into(), ReasoningMode::Short, 731, i != 0, true))
            .collect();
        let m = compute_metrics(&rs).unwrap();
        assert!((m.accuracy - 0.80).abs() < 1e-12);
        assert_eq!(m.thinking_rate, 0.0);
        assert_eq!(m.avg_tokens, 731.0);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(compute_metrics(&[]).is_err());
    }
}
