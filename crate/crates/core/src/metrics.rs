//! Confidence evaluation: normalized cross-entropy, ROC and precision-recall
//! areas, RMSE against `1 - WER`, and the rules for choosing which
//! utterance score feeds which metric.

use serde::{Deserialize, Serialize};

use crate::cem::Variant;
use crate::error::MetricsError;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: bool,
    pub weight: f64,
}

impl ScoredSample {
    pub fn new(score: f64, label: bool) -> Self {
        Self {
            score,
            label,
            weight: 1.0,
        }
    }
}

fn validate(samples: &[ScoredSample]) -> Result<(f64, f64), MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    let (mut n_pos, mut n_neg) = (0, 0);
    for (index, s) in samples.iter().enumerate() {
        if !s.score.is_finite() {
            return Err(MetricsError::InvalidSample {
                index,
                detail: format!("score {}", s.score),
            });
        }
        if !(s.weight.is_finite() && s.weight > 0.0) {
            return Err(MetricsError::InvalidSample {
                index,
                detail: format!("weight {}", s.weight),
            });
        }
        if s.label {
            pos += s.weight;
            n_pos += 1;
        } else {
            neg += s.weight;
            n_neg += 1;
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass {
            positives: n_pos,
            negatives: n_neg,
        });
    }
    Ok((pos, neg))
}

/// Normalized cross-entropy relative to the base-rate predictor.
pub fn nce(samples: &[ScoredSample]) -> Result<f64, MetricsError> {
    let (pos, neg) = validate(samples)?;
    let p = pos / (pos + neg);
    let h_base = -(pos * p.ln() + neg * (1.0 - p).ln());
    let h_conf: f64 = -samples
        .iter()
        .map(|s| {
            let c = s.score.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            s.weight * if s.label { c.ln() } else { (1.0 - c).ln() }
        })
        .sum::<f64>();
    Ok((h_base - h_conf) / h_base)
}

/// Samples sorted by descending score, grouped into tie blocks of
/// `(positive weight, negative weight)`.
fn tie_groups(samples: &[ScoredSample]) -> Vec<(f64, f64, f64)> {
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for s in sorted {
        let (p, n) = if s.label {
            (s.weight, 0.0)
        } else {
            (0.0, s.weight)
        };
        match groups.last_mut() {
            Some(g) if g.0 == s.score => {
                g.1 += p;
                g.2 += n;
            }
            _ => groups.push((s.score, p, n)),
        }
    }
    groups
}

/// ROC curve points `(false positive rate, true positive rate)`, one per
/// distinct threshold, starting at the origin.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let (pos, neg) = validate(samples)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (_, p, n) in tie_groups(samples) {
        tp += p;
        fp += n;
        points.push((fp / neg, tp / pos));
    }
    Ok(points)
}

/// Trapezoidal ROC area; ties count one half.
pub fn auc_roc(samples: &[ScoredSample]) -> Result<f64, MetricsError> {
    let points = roc_curve(samples)?;
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    Positive,
    Negative,
}

fn retarget(samples: &[ScoredSample], target: TargetClass) -> Vec<ScoredSample> {
    match target {
        TargetClass::Positive => samples.to_vec(),
        TargetClass::Negative => samples
            .iter()
            .map(|s| ScoredSample {
                score: 1.0 - s.score,
                label: !s.label,
                weight: s.weight,
            })
            .collect(),
    }
}

/// Precision-recall points `(recall, precision)`, one per distinct threshold.
pub fn pr_curve(
    samples: &[ScoredSample],
    target: TargetClass,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let samples = retarget(samples, target);
    let total_pos: f64 = samples.iter().filter(|s| s.label).map(|s| s.weight).sum();
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    if total_pos == 0.0 {
        return Err(MetricsError::SingleClass {
            positives: 0,
            negatives: samples.len(),
        });
    }
    if let Some((index, s)) = samples
        .iter()
        .enumerate()
        .find(|(_, s)| !s.score.is_finite())
    {
        return Err(MetricsError::InvalidSample {
            index,
            detail: format!("score {}", s.score),
        });
    }
    let (mut tp, mut fp) = (0.0, 0.0);
    Ok(tie_groups(&samples)
        .into_iter()
        .map(|(_, p, n)| {
            tp += p;
            fp += n;
            (tp / total_pos, tp / (tp + fp))
        })
        .collect())
}

/// Step-wise PR area: precision at each threshold times the recall gained there.
pub fn auc_pr(samples: &[ScoredSample], target: TargetClass) -> Result<f64, MetricsError> {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (recall, precision) in pr_curve(samples, target)? {
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Root mean squared error between confidence and `clamp(1 - wer, 0, 1)`.
pub fn rmse_one_minus_wer(per_utterance: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if per_utterance.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sq: f64 = per_utterance
        .iter()
        .map(|(c, wer)| (c - (1.0 - wer).clamp(0.0, 1.0)).powi(2))
        .sum();
    Ok((sq / per_utterance.len() as f64).sqrt())
}

/// Utterance-level scores a model can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UttScore {
    /// Mean word correctness probability.
    MuWcr,
    /// Utterance correctness probability.
    MuUtt,
    /// One minus the estimated WER.
    OneMinusMuWer,
}

impl UttScore {
    pub fn name(self) -> &'static str {
        match self {
            UttScore::MuWcr => "mu_wcr",
            UttScore::MuUtt => "mu_utt",
            UttScore::OneMinusMuWer => "one_minus_mu_wer",
        }
    }
}

/// Score feeding utterance AUC-ROC and AUC-PR.
pub fn ranking_score(variant: Variant) -> UttScore {
    if variant.has_utterance() {
        UttScore::MuUtt
    } else if variant.has_deletion() {
        UttScore::OneMinusMuWer
    } else {
        UttScore::MuWcr
    }
}

/// Score feeding the `1 - WER` RMSE; `None` when the model cannot estimate it.
pub fn rmse_score(variant: Variant) -> Option<UttScore> {
    if variant.has_deletion() {
        Some(UttScore::OneMinusMuWer)
    } else if variant.has_word() {
        Some(UttScore::MuWcr)
    } else {
        None
    }
}

/// Per-utterance inputs to the report.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UtteranceScores {
    pub mu_wcr: Option<f64>,
    pub mu_utt: Option<f64>,
    pub mu_wer: Option<f64>,
    pub wer: f64,
    pub empty_reference: bool,
}

impl UtteranceScores {
    /// The chosen score as a confidence in `[0, 1]`.
    pub fn get(&self, which: UttScore) -> Option<f64> {
        match which {
            UttScore::MuWcr => self.mu_wcr,
            UttScore::MuUtt => self.mu_utt,
            UttScore::OneMinusMuWer => self.mu_wer.map(|w| (1.0 - w).clamp(0.0, 1.0)),
        }
    }

    pub fn is_correct(&self) -> bool {
        self.wer == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordMetrics {
    pub nce: f64,
    pub auc_roc: f64,
    pub auc_pr_negative: f64,
    pub n_words: usize,
    pub roc_curve: Vec<(f64, f64)>,
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceMetrics {
    pub auc_roc: f64,
    pub auc_pr: f64,
    /// `None` when the variant has no WER-like score.
    pub rmse_vs_one_minus_wer: Option<f64>,
    pub n_utterances: usize,
    pub ranking_score: UttScore,
    pub rmse_score: Option<UttScore>,
    /// Utterances whose `1 - WER` target was clamped into `[0, 1]`.
    pub rmse_clamped: usize,
    /// Empty-reference utterances left out of the RMSE.
    pub rmse_excluded: usize,
    pub roc_curve: Vec<(f64, f64)>,
    pub pr_curve: Vec<(f64, f64)>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<WordMetrics>,
    pub utterance: UtteranceMetrics,
}

/// Build the report for `variant`. `word_samples` pools every word of the
/// evaluated hypotheses (label = tagged correct) and must be given exactly
/// when the variant has a word head.
pub fn assemble_report(
    variant: Variant,
    word_samples: Option<&[ScoredSample]>,
    utterances: &[UtteranceScores],
) -> Result<MetricsReport, MetricsError> {
    let word = match (variant.has_word(), word_samples) {
        (true, Some(samples)) => Some(WordMetrics {
            nce: nce(samples)?,
            auc_roc: auc_roc(samples)?,
            auc_pr_negative: auc_pr(samples, TargetClass::Negative)?,
            n_words: samples.len(),
            roc_curve: roc_curve(samples)?,
            pr_curve: pr_curve(samples, TargetClass::Negative)?,
        }),
        (true, None) => {
            return Err(MetricsError::MissingScore {
                variant: variant.name(),
                score: "c_w",
            })
        }
        (false, _) => None,
    };

    let rank_by = ranking_score(variant);
    let mut utt_samples = Vec::with_capacity(utterances.len());
    for u in utterances {
        let score = u.get(rank_by).ok_or(MetricsError::MissingScore {
            variant: variant.name(),
            score: rank_by.name(),
        })?;
        utt_samples.push(ScoredSample::new(score, u.is_correct()));
    }

    let rmse_by = rmse_score(variant);
    let (mut rmse, mut clamped, mut excluded) = (None, 0, 0);
    if let Some(which) = rmse_by {
        let mut pairs = Vec::with_capacity(utterances.len());
        for u in utterances {
            if u.empty_reference {
                excluded += 1;
                continue;
            }
            let c = u.get(which).ok_or(MetricsError::MissingScore {
                variant: variant.name(),
                score: which.name(),
            })?;
            clamped += usize::from(!(0.0..=1.0).contains(&(1.0 - u.wer)));
            pairs.push((c, u.wer));
        }
        rmse = Some(rmse_one_minus_wer(&pairs)?);
    }

    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        variant,
        word,
        utterance: UtteranceMetrics {
            auc_roc: auc_roc(&utt_samples)?,
            auc_pr: auc_pr(&utt_samples, TargetClass::Positive)?,
            rmse_vs_one_minus_wer: rmse,
            n_utterances: utterances.len(),
            ranking_score: rank_by,
            rmse_score: rmse_by,
            rmse_clamped: clamped,
            rmse_excluded: excluded,
            roc_curve: roc_curve(&utt_samples)?,
            pr_curve: pr_curve(&utt_samples, TargetClass::Positive)?,
        },
    })
}
