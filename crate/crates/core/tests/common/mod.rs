#![allow(dead_code)]

use cemkit::cem::{CemInput, ModelConfig, Variant};
use cemkit::datagen::{gen_corpus, ChannelConfig, Split};
use cemkit::AlignmentLabels;
use rand::Rng;

/// Words drawn from a small alphabet so that matches are common.
pub fn random_words<R: Rng>(rng: &mut R, max_len: usize) -> Vec<String> {
    const WORDS: [&str; 6] = ["ba", "ke", "mo", "tu", "zi", "ro"];
    let n = rng.random_range(0..=max_len);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
        .collect()
}

/// Unit-cost edit distance over the full DP matrix.
pub fn levenshtein(a: &[String], b: &[String]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

pub const SMALL_D_ACOUSTIC: usize = 6;

pub fn small_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        d_model: 8,
        heads: 2,
        blocks: 1,
        ffn_hidden: 12,
        d_acoustic: SMALL_D_ACOUSTIC,
        ..ModelConfig::default()
    }
}

/// Noisy synthetic hypotheses with labels, for gradient checks.
pub fn small_instances(count: usize, seed: u64) -> Vec<(CemInput, AlignmentLabels)> {
    let cfg = ChannelConfig {
        d_acoustic: SMALL_D_ACOUSTIC,
        min_words: 2,
        max_words: 5,
        p_sub: 0.25,
        p_del: 0.15,
        p_ins: 0.1,
        seed,
        ..ChannelConfig::default()
    };
    let utts = gen_corpus(&cfg, Split::Train, count * 2).expect("corpus");
    let mut out = Vec::new();
    for (i, u) in utts.iter().enumerate() {
        let hyp = &u.hypotheses[i % u.hypotheses.len()];
        if hyp.wp_tokens.is_empty() {
            continue;
        }
        out.push((
            CemInput::new(hyp, &u.acoustic).expect("input"),
            u.labels(hyp),
        ));
        if out.len() == count {
            break;
        }
    }
    assert_eq!(out.len(), count);
    out
}
