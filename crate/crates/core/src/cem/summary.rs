//! Utterance-level estimates derived from the word and deletion heads.

use serde::{Deserialize, Serialize};

use super::model::CemOutput;
use crate::alignment::{AlignmentLabels, Tag};
use crate::error::CemError;

/// Smallest denominator allowed in the WER estimate.
pub const WER_DENOMINATOR_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    /// Mean correct-probability over the hypothesis words.
    pub mu_wcr: f64,
    /// Expected deletions, `Σ exp r_j`; `None` without a deletion head.
    pub d_hat: Option<f64>,
    pub i_hat: f64,
    pub s_hat: f64,
    /// `(D̂ + Î + Ŝ) / (L + D̂ - Î)`; `None` without a deletion head.
    pub mu_wer: Option<f64>,
    /// Set when `L + D̂ - Î` fell below the floor and was clamped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub denominator_clamped: bool,
}

pub fn estimate_summary(output: &CemOutput) -> Result<ConfidenceSummary, CemError> {
    let probs = output.word_probs.as_ref().ok_or(CemError::MissingHead {
        variant: "output",
        head: "word",
    })?;
    if probs.is_empty() {
        return Err(CemError::EmptyHypothesis);
    }
    let l = probs.len() as f64;
    let mu_wcr = probs.iter().map(|p| p[0]).sum::<f64>() / l;
    let i_hat: f64 = probs.iter().map(|p| p[1]).sum();
    let s_hat: f64 = probs.iter().map(|p| p[2]).sum();
    let mut summary = ConfidenceSummary {
        mu_wcr,
        d_hat: None,
        i_hat,
        s_hat,
        mu_wer: None,
        denominator_clamped: false,
    };
    if let Some(rates) = &output.deletion_log_rates {
        if rates.len() != probs.len() + 1 {
            return Err(CemError::LengthMismatch {
                what: "deletion_log_rates",
                expected: probs.len() + 1,
                got: rates.len(),
            });
        }
        let d_hat: f64 = rates.iter().map(|r| r.exp()).sum();
        let mut denom = l + d_hat - i_hat;
        if denom < WER_DENOMINATOR_FLOOR {
            denom = WER_DENOMINATOR_FLOOR;
            summary.denominator_clamped = true;
        }
        summary.d_hat = Some(d_hat);
        summary.mu_wer = Some((d_hat + i_hat + s_hat) / denom);
    }
    Ok(summary)
}

impl CemOutput {
    /// Outputs that reproduce `labels` exactly: one-hot word probabilities,
    /// log-rates `ln e_j` (so `exp r_j = e_j`, with `-∞` for empty gaps) and
    /// the utterance bit as the utterance score.
    pub fn oracle(labels: &AlignmentLabels) -> Self {
        let one_hot = |t: &Tag| {
            let mut p = [0.0; 3];
            p[t.class_index()] = 1.0;
            p
        };
        let word: Vec<[f64; 3]> = labels.word_tags.iter().map(one_hot).collect();
        Self {
            token_probs: None,
            word_probs: Some(word),
            deletion_log_rates: Some(
                labels
                    .deletion_gaps
                    .iter()
                    .map(|&e| (e as f64).ln())
                    .collect(),
            ),
            utt_score: Some(f64::from(labels.e_utt)),
            utt_weights: None,
        }
    }
}
