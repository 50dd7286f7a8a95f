//! Inputs shared by the benchmarks.

use cemkit::cem::train::Example;
use cemkit::cem::{build_examples, CemModel, ModelConfig, Variant};
use cemkit::datagen::{gen_corpus, ChannelConfig, Split};
use cemkit::metrics::ScoredSample;

/// Default-sized model and a handful of synthetic examples.
pub fn model_and_examples(variant: Variant, n: usize) -> (CemModel, Vec<Example>) {
    let utts = gen_corpus(&ChannelConfig::default(), Split::Train, n).expect("corpus");
    let examples = build_examples(&utts, true).expect("examples");
    let model = CemModel::new(
        ModelConfig {
            variant,
            ..ModelConfig::default()
        },
        0,
    )
    .expect("model");
    (model, examples)
}

/// Word sequences of the given length with a few scattered differences.
pub fn word_pair(len: usize) -> (Vec<String>, Vec<String>) {
    let reference: Vec<String> = (0..len).map(|i| format!("w{}", i % 97)).collect();
    let hyp = reference
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 11 != 5)
        .map(|(i, w)| {
            if i % 7 == 3 {
                format!("x{i}")
            } else {
                w.clone()
            }
        })
        .collect();
    (hyp, reference)
}

/// Deterministic, overlapping scores for `n` samples.
pub fn scored_samples(n: usize) -> Vec<ScoredSample> {
    (0..n)
        .map(|i| {
            let label = (i * 7919) % 10 < 6;
            let jitter = ((i * 104_729) % 1000) as f64 / 1000.0;
            ScoredSample::new(0.6 * jitter + if label { 0.4 } else { 0.0 }, label)
        })
        .collect()
}
