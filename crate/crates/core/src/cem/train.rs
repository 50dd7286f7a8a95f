//! Mini-batch Adam training with validation-based early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::loss::{total_loss_graph, LossParts};
use super::model::{forward_graph, CemInput, CemModel};
use crate::alignment::AlignmentLabels;
use crate::corpus::Utterance;
use crate::error::{CemError, TensorError};
use crate::graph::Graph;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Parameters;

/// One (hypothesis, labels) training pair.
#[derive(Debug, Clone)]
pub struct Example {
    pub utterance_id: String,
    pub beam_rank: usize,
    pub input: CemInput,
    pub labels: AlignmentLabels,
}

/// Labelled examples from `utterances`. Empty hypotheses carry no words to
/// score and are skipped.
pub fn build_examples(
    utterances: &[Utterance],
    all_hypotheses: bool,
) -> Result<Vec<Example>, CemError> {
    let mut out = Vec::new();
    for u in utterances {
        let take = if all_hypotheses {
            u.hypotheses.len()
        } else {
            1
        };
        for hyp in u.hypotheses.iter().take(take) {
            if hyp.wp_tokens.is_empty() {
                continue;
            }
            out.push(Example {
                utterance_id: u.utterance_id.clone(),
                beam_rank: hyp.beam_rank,
                input: CemInput::new(hyp, &u.acoustic)?,
                labels: u.labels(hyp),
            });
        }
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deletion_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utt_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_total_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_word_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_deletion_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_utt_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CemModel,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Running means of the loss terms over an epoch.
#[derive(Default)]
struct Meter {
    n: usize,
    total: f64,
    word: Option<f64>,
    deletion: Option<f64>,
    utt: Option<f64>,
}

impl Meter {
    fn add(&mut self, p: &LossParts) {
        fn acc(slot: &mut Option<f64>, v: Option<f64>) {
            if let Some(v) = v {
                *slot = Some(slot.unwrap_or(0.0) + v);
            }
        }
        self.n += 1;
        self.total += p.total;
        acc(&mut self.word, p.word);
        acc(&mut self.deletion, p.deletion);
        acc(&mut self.utt, p.utt);
    }

    fn mean(&self) -> LossParts {
        let n = self.n.max(1) as f64;
        LossParts {
            total: self.total / n,
            word: self.word.map(|v| v / n),
            deletion: self.deletion.map(|v| v / n),
            utt: self.utt.map(|v| v / n),
        }
    }
}

fn non_finite(epoch: usize, step: usize, ex: &Example, detail: String) -> CemError {
    CemError::NonFiniteLoss {
        epoch,
        step,
        utterance_id: format!("{}#{}", ex.utterance_id, ex.beam_rank),
        detail,
    }
}

/// Loss of one example, optionally with backpropagation.
fn example_loss(
    cfg: &ModelConfig,
    params: &Parameters,
    ex: &Example,
    backward: bool,
    at: (usize, usize),
) -> Result<(LossParts, Option<Graph>), CemError> {
    let wrap = |e: CemError| match e {
        CemError::Tensor(t @ TensorError::NonFinite { .. }) => {
            non_finite(at.0, at.1, ex, t.to_string())
        }
        other => other,
    };
    let mut g = Graph::new();
    let vars = forward_graph(&mut g, cfg, params, &ex.input).map_err(wrap)?;
    let loss = total_loss_graph(&mut g, cfg, &vars, &ex.labels).map_err(wrap)?;
    let parts = loss.values(&g);
    if !parts.is_finite() {
        return Err(non_finite(at.0, at.1, ex, format!("{parts:?}")));
    }
    if backward {
        g.backward(loss.total).map_err(|e| wrap(e.into()))?;
        return Ok((parts, Some(g)));
    }
    Ok((parts, None))
}

/// Mean loss terms of `model` over `examples`.
pub fn evaluate_loss(model: &CemModel, examples: &[Example]) -> Result<LossParts, CemError> {
    let mut meter = Meter::default();
    for ex in examples {
        meter.add(&example_loss(&model.config, &model.params, ex, false, (0, 0))?.0);
    }
    Ok(meter.mean())
}

/// Train a fresh model initialised from `train_cfg.seed`.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
) -> Result<TrainOutcome, CemError> {
    let model = CemModel::new(*model_cfg, train_cfg.seed)?;
    train_from(model, train_cfg, train_set, val_set)
}

/// Continue training `model`. Every random choice derives from
/// `train_cfg.seed`, so equal inputs give bit-identical results.
pub fn train_from(
    mut model: CemModel,
    train_cfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
) -> Result<TrainOutcome, CemError> {
    train_cfg.validate()?;
    if train_set.is_empty() {
        return Err(CemError::EmptyDataset);
    }
    let cfg = model.config;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: train_cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5348_5546);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, usize, Parameters)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut meter = Meter::default();
        for batch in order.chunks(train_cfg.batch_size) {
            model.params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (parts, g) =
                    example_loss(&cfg, &model.params, &train_set[i], true, (epoch, step))?;
                meter.add(&parts);
                model
                    .params
                    .accumulate_grads(&g.expect("backward requested").param_grads(), scale);
            }
            adam.step(&mut model.params)?;
            step += 1;
        }
        let train_mean = meter.mean();
        let val_mean = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, val_set)?)
        };
        log.push(EpochLog {
            epoch,
            total_loss: train_mean.total,
            word_loss: train_mean.word,
            deletion_loss: train_mean.deletion,
            utt_loss: train_mean.utt,
            val_total_loss: val_mean.map(|v| v.total),
            val_word_loss: val_mean.and_then(|v| v.word),
            val_deletion_loss: val_mean.and_then(|v| v.deletion),
            val_utt_loss: val_mean.and_then(|v| v.utt),
        });

        if let Some(v) = val_mean {
            if best.as_ref().is_none_or(|(b, _, _)| v.total < *b) {
                best = Some((v.total, epoch, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if train_cfg.patience > 0 && since_best >= train_cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => log.len(),
    };
    model.params.zero_grads();
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cem::config::Variant;
    use crate::datagen::{gen_corpus, ChannelConfig, Split};

    fn tiny() -> (ModelConfig, Vec<Example>) {
        let data = ChannelConfig {
            d_acoustic: 8,
            min_words: 2,
            max_words: 3,
            n_best: 2,
            ..ChannelConfig::default()
        };
        let utts = gen_corpus(&data, Split::Train, 4).unwrap();
        let cfg = ModelConfig {
            variant: Variant::WUD,
            d_model: 8,
            ffn_hidden: 8,
            d_acoustic: 8,
            ..ModelConfig::default()
        };
        (cfg, build_examples(&utts, true).unwrap())
    }

    #[test]
    fn examples_skip_nothing_when_hypotheses_are_nonempty() {
        let (_, ex) = tiny();
        assert!(ex.len() <= 8 && ex.len() >= 4);
        for e in &ex {
            assert_eq!(e.labels.num_words(), e.input.num_words());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (cfg, ex) = tiny();
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tc, &ex, &[]).unwrap();
        assert_eq!(
            out.model.params,
            CemModel::new(cfg, tc.seed).unwrap().params
        );
        assert_eq!(out.log.len(), 3);
        let first = &out.log[0];
        assert!(
            first.word_loss.is_some() && first.deletion_loss.is_some() && first.utt_loss.is_some()
        );
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let (cfg, _) = tiny();
        assert!(matches!(
            train(&cfg, &TrainConfig::default(), &[], &[]),
            Err(CemError::EmptyDataset)
        ));
    }
}
