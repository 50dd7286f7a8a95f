//! Scoring hypotheses with a trained model or with ground-truth labels, and
//! turning the scores into a metrics report.

use super::config::Variant;
use super::model::{CemModel, CemOutput};
use super::summary::estimate_summary;
use crate::alignment::{AlignmentLabels, Tag};
use crate::corpus::{Hypothesis, Utterance};
use crate::error::CemError;
use crate::metrics::{assemble_report, MetricsReport, ScoredSample, UtteranceScores};

/// Source of confidence outputs.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Model(&'a CemModel),
    /// True labels injected as confidences, restricted to the heads the
    /// variant would have.
    Oracle(Variant),
}

impl Scorer<'_> {
    pub fn variant(&self) -> Variant {
        match self {
            Scorer::Model(m) => m.variant(),
            Scorer::Oracle(v) => *v,
        }
    }

    /// Outputs for one hypothesis; `None` for an empty hypothesis.
    pub fn output(
        &self,
        utt: &Utterance,
        hyp: &Hypothesis,
        labels: &AlignmentLabels,
    ) -> Result<Option<CemOutput>, CemError> {
        if hyp.wp_tokens.is_empty() {
            return Ok(None);
        }
        match self {
            Scorer::Model(m) => m.forward(hyp, &utt.acoustic).map(Some),
            Scorer::Oracle(v) => {
                let mut out = CemOutput::oracle(labels);
                if !v.has_word() {
                    out.word_probs = None;
                }
                if !v.has_deletion() {
                    out.deletion_log_rates = None;
                }
                if !v.has_utterance() {
                    out.utt_score = None;
                }
                Ok(Some(out))
            }
        }
    }
}

/// Utterance scores for one output. An empty hypothesis gets zero
/// confidence on every available score.
pub fn utterance_scores(
    variant: Variant,
    output: Option<&CemOutput>,
    labels: &AlignmentLabels,
) -> Result<UtteranceScores, CemError> {
    let mut s = UtteranceScores {
        wer: labels.wer,
        empty_reference: labels.empty_reference,
        ..UtteranceScores::default()
    };
    match output {
        None => {
            s.mu_wcr = variant.has_word().then_some(0.0);
            s.mu_utt = variant.has_utterance().then_some(0.0);
            s.mu_wer = variant.has_deletion().then_some(1.0);
        }
        Some(out) => {
            if out.word_probs.is_some() {
                let summary = estimate_summary(out)?;
                s.mu_wcr = Some(summary.mu_wcr);
                s.mu_wer = summary.mu_wer;
            }
            s.mu_utt = out.utt_score;
        }
    }
    Ok(s)
}

/// Per-word samples (score `c_w`, positive when tagged correct).
pub fn word_samples(output: &CemOutput, labels: &AlignmentLabels) -> Vec<ScoredSample> {
    let Some(probs) = &output.word_probs else {
        return Vec::new();
    };
    probs
        .iter()
        .zip(&labels.word_tags)
        .map(|(p, t)| ScoredSample::new(p[0], *t == Tag::Cor))
        .collect()
}

/// Everything the report is computed from.
#[derive(Debug, Clone, Default)]
pub struct EvalSamples {
    pub words: Vec<ScoredSample>,
    pub utterances: Vec<UtteranceScores>,
}

/// Score the top hypothesis of every utterance.
pub fn collect_samples(
    scorer: Scorer<'_>,
    utterances: &[Utterance],
) -> Result<EvalSamples, CemError> {
    let mut samples = EvalSamples::default();
    for u in utterances {
        let Some(hyp) = u.top() else {
            continue;
        };
        let labels = u.labels(hyp);
        let out = scorer.output(u, hyp, &labels)?;
        if let Some(o) = &out {
            samples.words.extend(word_samples(o, &labels));
        }
        samples
            .utterances
            .push(utterance_scores(scorer.variant(), out.as_ref(), &labels)?);
    }
    if samples.utterances.is_empty() {
        return Err(CemError::EmptyDataset);
    }
    Ok(samples)
}

/// Evaluation errors: model failures or metrics that cannot be computed.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Cem(#[from] CemError),
    #[error(transparent)]
    Metrics(#[from] crate::error::MetricsError),
}

pub fn evaluate(scorer: Scorer<'_>, utterances: &[Utterance]) -> Result<MetricsReport, EvalError> {
    let samples = collect_samples(scorer, utterances)?;
    let variant = scorer.variant();
    let words = variant.has_word().then_some(samples.words.as_slice());
    Ok(assemble_report(variant, words, &samples.utterances)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_corpus, ChannelConfig, Split};

    #[test]
    fn oracle_report_is_perfect() {
        let cfg = ChannelConfig {
            p_sub: 0.2,
            p_del: 0.1,
            p_ins: 0.05,
            ..ChannelConfig::default()
        };
        let utts = gen_corpus(&cfg, Split::Test, 60).unwrap();
        for v in Variant::ALL {
            let r = evaluate(Scorer::Oracle(v), &utts).unwrap();
            assert_eq!(r.word.is_some(), v.has_word());
            if let Some(w) = &r.word {
                assert!(w.nce >= 0.999, "{v}: {}", w.nce);
                assert_eq!(w.auc_roc, 1.0);
                assert_eq!(w.auc_pr_negative, 1.0);
            }
            // Mean word correctness cannot see deletions.
            if v.has_utterance() || v.has_deletion() {
                assert_eq!(r.utterance.auc_roc, 1.0, "{v}");
                assert_eq!(r.utterance.auc_pr, 1.0, "{v}");
            }
            if v.has_deletion() {
                let rmse = r.utterance.rmse_vs_one_minus_wer.unwrap();
                assert!(rmse < 1e-12, "{v}: {rmse}");
            }
        }
    }
}
