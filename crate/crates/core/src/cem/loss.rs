//! Word cross-entropy, Poisson deletion likelihood, utterance binary
//! cross-entropy, and their weighted combination.
//!
//! Each loss has a graph form (used for training and gradient checks) and a
//! value form over [`CemOutput`].

use super::config::ModelConfig;
use super::model::{CemOutput, CemVars};
use crate::alignment::AlignmentLabels;
use crate::error::CemError;
use crate::graph::{Graph, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamp_ln(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), CemError> {
    if expected == got {
        Ok(())
    } else {
        Err(CemError::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}

/// `-Σ_j ln p_j[tag_j]` over an `[L, 3]` probability matrix.
pub fn word_loss_graph(
    g: &mut Graph,
    word_probs: Var,
    labels: &AlignmentLabels,
) -> Result<Var, CemError> {
    let (rows, cols) = g.shape(word_probs);
    check_len("word_probs", labels.num_words(), rows)?;
    check_len("word_probs columns", 3, cols)?;
    let logp = g.ln_clamped(word_probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let at: Vec<(usize, usize)> = labels
        .word_tags
        .iter()
        .enumerate()
        .map(|(j, t)| (j, t.class_index()))
        .collect();
    let picked = g.pick(logp, &at)?;
    let total = g.sum(picked)?;
    Ok(g.scale(total, -1.0)?)
}

/// `-Σ_j (e_j r_j - exp r_j)` over an `[L + 1, 1]` column of log-rates.
pub fn deletion_loss_graph(
    g: &mut Graph,
    log_rates: Var,
    labels: &AlignmentLabels,
) -> Result<Var, CemError> {
    let (rows, cols) = g.shape(log_rates);
    check_len("deletion_log_rates", labels.deletion_gaps.len(), rows)?;
    check_len("deletion_log_rates columns", 1, cols)?;
    let counts = g.matrix(
        rows,
        1,
        labels.deletion_gaps.iter().map(|&e| e as f64).collect(),
    )?;
    let er = g.mul(counts, log_rates)?;
    let rate = g.exp(log_rates)?;
    let ll = g.sub(er, rate)?;
    let total = g.sum(ll)?;
    Ok(g.scale(total, -1.0)?)
}

/// Binary cross-entropy of a `[1, 1]` score against `e_utt`.
pub fn utterance_loss_graph(
    g: &mut Graph,
    score: Var,
    labels: &AlignmentLabels,
) -> Result<Var, CemError> {
    check_len("utt_score", 1, g.value(score).len())?;
    let p = if labels.e_utt == 1 {
        score
    } else {
        g.affine(score, -1.0, 1.0)?
    };
    let lp = g.ln_clamped(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    Ok(g.scale(lp, -1.0)?)
}

/// Per-term values of one utterance's loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub word: Option<f64>,
    pub deletion: Option<f64>,
    pub utt: Option<f64>,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && [self.word, self.deletion, self.utt]
                .iter()
                .all(|v| v.is_none_or(f64::is_finite))
    }
}

/// Graph handles for the weighted loss and its unweighted terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub word: Option<Var>,
    pub deletion: Option<Var>,
    pub utt: Option<Var>,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossParts {
        LossParts {
            total: g.scalar(self.total),
            word: self.word.map(|v| g.scalar(v)),
            deletion: self.deletion.map(|v| g.scalar(v)),
            utt: self.utt.map(|v| g.scalar(v)),
        }
    }
}

fn missing(cfg: &ModelConfig, head: &'static str) -> CemError {
    CemError::MissingHead {
        variant: cfg.variant.name(),
        head,
    }
}

/// `(1/L) L_word + (λ_del/(L+1)) L_del + λ_utt L_utt` with inactive terms dropped.
pub fn total_loss_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    vars: &CemVars,
    labels: &AlignmentLabels,
) -> Result<LossVars, CemError> {
    let l = labels.num_words();
    if l == 0 {
        return Err(CemError::EmptyHypothesis);
    }
    let v = cfg.variant;
    let mut terms = Vec::new();
    let (mut word, mut deletion, mut utt) = (None, None, None);
    if v.has_word() {
        let probs = vars.word_probs.ok_or_else(|| missing(cfg, "word"))?;
        let w = word_loss_graph(g, probs, labels)?;
        word = Some(w);
        terms.push(g.scale(w, 1.0 / l as f64)?);
    }
    if v.has_deletion() {
        let rates = vars
            .deletion_log_rates
            .ok_or_else(|| missing(cfg, "deletion"))?;
        let d = deletion_loss_graph(g, rates, labels)?;
        deletion = Some(d);
        terms.push(g.scale(d, cfg.lambda_deletion / (l + 1) as f64)?);
    }
    if v.has_utterance() {
        let score = vars.utt_score.ok_or_else(|| missing(cfg, "utterance"))?;
        let u = utterance_loss_graph(g, score, labels)?;
        utt = Some(u);
        terms.push(g.scale(u, cfg.lambda_utt)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(LossVars {
        total,
        word,
        deletion,
        utt,
    })
}

pub fn word_loss(output: &CemOutput, labels: &AlignmentLabels) -> Result<f64, CemError> {
    let probs = output.word_probs.as_ref().ok_or(CemError::MissingHead {
        variant: "output",
        head: "word",
    })?;
    check_len("word_probs", labels.num_words(), probs.len())?;
    Ok(-labels
        .word_tags
        .iter()
        .zip(probs)
        .map(|(t, p)| clamp_ln(p[t.class_index()]))
        .sum::<f64>())
}

pub fn deletion_loss(output: &CemOutput, labels: &AlignmentLabels) -> Result<f64, CemError> {
    let rates = output
        .deletion_log_rates
        .as_ref()
        .ok_or(CemError::MissingHead {
            variant: "output",
            head: "deletion",
        })?;
    check_len(
        "deletion_log_rates",
        labels.deletion_gaps.len(),
        rates.len(),
    )?;
    Ok(-labels
        .deletion_gaps
        .iter()
        .zip(rates)
        .map(|(&e, &r)| e as f64 * r - r.exp())
        .sum::<f64>())
}

pub fn utterance_loss(output: &CemOutput, labels: &AlignmentLabels) -> Result<f64, CemError> {
    let mu = output.utt_score.ok_or(CemError::MissingHead {
        variant: "output",
        head: "utterance",
    })?;
    Ok(if labels.e_utt == 1 {
        -clamp_ln(mu)
    } else {
        -clamp_ln(1.0 - mu)
    })
}

pub fn total_loss(
    output: &CemOutput,
    labels: &AlignmentLabels,
    cfg: &ModelConfig,
) -> Result<LossParts, CemError> {
    let l = labels.num_words();
    if l == 0 {
        return Err(CemError::EmptyHypothesis);
    }
    let v = cfg.variant;
    let mut parts = LossParts::default();
    if v.has_word() {
        let w = word_loss(output, labels)?;
        parts.word = Some(w);
        parts.total += w / l as f64;
    }
    if v.has_deletion() {
        let d = deletion_loss(output, labels)?;
        parts.deletion = Some(d);
        parts.total += cfg.lambda_deletion / (l + 1) as f64 * d;
    }
    if v.has_utterance() {
        let u = utterance_loss(output, labels)?;
        parts.utt = Some(u);
        parts.total += cfg.lambda_utt * u;
    }
    Ok(parts)
}
