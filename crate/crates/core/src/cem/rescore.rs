//! n-best rescoring by confidence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Variant;
use super::eval::Scorer;
use super::summary::estimate_summary;
use crate::corpus::{Hypothesis, Utterance};
use crate::error::CemError;

/// Confidence used to rank the n-best entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RescoreScore {
    /// Mean word correctness.
    Wcr,
    /// Utterance confidence.
    Utt,
    /// One minus the estimated WER.
    Wer,
}

impl RescoreScore {
    pub fn name(self) -> &'static str {
        match self {
            RescoreScore::Wcr => "wcr",
            RescoreScore::Utt => "utt",
            RescoreScore::Wer => "wer",
        }
    }

    pub fn available(self, variant: Variant) -> bool {
        match self {
            RescoreScore::Wcr => variant.has_word(),
            RescoreScore::Utt => variant.has_utterance(),
            RescoreScore::Wer => variant.has_deletion(),
        }
    }
}

impl fmt::Display for RescoreScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RescoreScore {
    type Err = CemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wcr" => Ok(RescoreScore::Wcr),
            "utt" => Ok(RescoreScore::Utt),
            "wer" => Ok(RescoreScore::Wer),
            _ => Err(CemError::Config(format!(
                "unknown score `{s}` (expected wcr, utt or wer)"
            ))),
        }
    }
}

/// Index of the highest-scoring candidate; ties go to the lowest beam rank.
pub fn rescore_nbest(candidates: &[(&Hypothesis, f64)]) -> Result<usize, CemError> {
    if candidates.is_empty() {
        return Err(CemError::EmptyCandidates);
    }
    if let Some(&(_, s)) = candidates.iter().find(|(_, s)| !s.is_finite()) {
        return Err(CemError::NonFiniteScore(s));
    }
    let mut best = 0;
    for (i, &(h, s)) in candidates.iter().enumerate().skip(1) {
        let (bh, bs) = candidates[best];
        if s > bs || (s == bs && h.beam_rank < bh.beam_rank) {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreReport {
    pub score: String,
    pub n_utterances: usize,
    /// Corpus WER of the beam-top hypotheses.
    pub baseline_wer: f64,
    pub rescored_wer: f64,
    /// Corpus WER when the best hypothesis in each beam is chosen.
    pub oracle_wer: f64,
    /// Utterances where rescoring picked a hypothesis other than the beam top.
    pub changed: usize,
    /// Beam rank selected for each utterance, in input order.
    pub selected_ranks: Vec<usize>,
}

/// Rescore every utterance with `score_fn` and report corpus WERs
/// (total errors over total reference words).
pub fn rescore_with<F>(
    utterances: &[Utterance],
    label: &str,
    mut score_fn: F,
) -> Result<RescoreReport, CemError>
where
    F: FnMut(&Utterance, &Hypothesis) -> Result<f64, CemError>,
{
    let (mut ref_words, mut base, mut rescored, mut oracle) = (0usize, 0usize, 0usize, 0usize);
    let mut changed = 0;
    let mut selected_ranks = Vec::with_capacity(utterances.len());
    for u in utterances {
        if u.hypotheses.is_empty() {
            return Err(CemError::EmptyCandidates);
        }
        let errors: Vec<usize> = u
            .hypotheses
            .iter()
            .map(|h| u.labels(h).counts.errors())
            .collect();
        let mut scored = Vec::with_capacity(u.hypotheses.len());
        for h in &u.hypotheses {
            scored.push((h, score_fn(u, h)?));
        }
        let pick = rescore_nbest(&scored)?;
        let top = (0..u.hypotheses.len())
            .min_by_key(|&i| u.hypotheses[i].beam_rank)
            .expect("non-empty");
        ref_words += u.reference.len();
        base += errors[top];
        rescored += errors[pick];
        oracle += errors.iter().copied().min().expect("non-empty");
        changed += usize::from(pick != top);
        selected_ranks.push(u.hypotheses[pick].beam_rank);
    }
    let denom = ref_words.max(1) as f64;
    Ok(RescoreReport {
        score: label.to_string(),
        n_utterances: utterances.len(),
        baseline_wer: base as f64 / denom,
        rescored_wer: rescored as f64 / denom,
        oracle_wer: oracle as f64 / denom,
        changed,
        selected_ranks,
    })
}

/// Rescore with one of the model's confidences. Empty hypotheses score 0.
pub fn rescore_corpus(
    scorer: Scorer<'_>,
    utterances: &[Utterance],
    score: RescoreScore,
) -> Result<RescoreReport, CemError> {
    let variant = scorer.variant();
    if !score.available(variant) {
        return Err(CemError::MissingHead {
            variant: variant.name(),
            head: match score {
                RescoreScore::Wcr => "word",
                RescoreScore::Utt => "utterance",
                RescoreScore::Wer => "deletion",
            },
        });
    }
    rescore_with(utterances, score.name(), |u, h| {
        let labels = u.labels(h);
        let Some(out) = scorer.output(u, h, &labels)? else {
            return Ok(0.0);
        };
        Ok(match score {
            RescoreScore::Utt => out.utt_score.expect("checked above"),
            RescoreScore::Wcr => estimate_summary(&out)?.mu_wcr,
            RescoreScore::Wer => 1.0 - estimate_summary(&out)?.mu_wer.expect("checked above"),
        })
    })
}

/// Rescore with the true `1 - WER` of each hypothesis.
pub fn rescore_oracle(utterances: &[Utterance]) -> Result<RescoreReport, CemError> {
    rescore_with(utterances, "oracle", |u, h| Ok(1.0 - u.labels(h).wer))
}
