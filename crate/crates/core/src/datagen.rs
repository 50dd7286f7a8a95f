//! Synthetic recognition channel: CVC vocabulary, sentence sampling,
//! stochastic hypothesis corruption, word-piece tokenization and acoustic
//! frames derived from the reference.
//!
//! All randomness for utterance `i` of a split comes from one ChaCha stream
//! keyed by `(seed, split, i)`, so any utterance can be regenerated alone.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::WORD_START;
use crate::corpus::{AcousticRecipe, Hypothesis, Utterance};
use crate::error::DataError;
use crate::tensor::Tensor;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub vocab_size: usize,
    pub vocab_seed: u64,
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub p_sub: f64,
    pub p_ins: f64,
    pub p_del: f64,
    pub n_best: usize,
    /// Std of the Gaussian added to the simulated beam score.
    pub beam_noise_std: f64,
    pub noise_std: f64,
    pub frames_per_wp: usize,
    pub d_acoustic: usize,
    pub wp_chunk: usize,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 400,
            vocab_seed: 17,
            min_syllables: 1,
            max_syllables: 3,
            min_words: 3,
            max_words: 8,
            p_sub: 0.08,
            p_ins: 0.02,
            p_del: 0.05,
            n_best: 4,
            beam_noise_std: 0.5,
            noise_std: 0.3,
            frames_per_wp: 2,
            d_acoustic: 16,
            wp_chunk: 3,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        for (name, p) in [
            ("p_sub", self.p_sub),
            ("p_ins", self.p_ins),
            ("p_del", self.p_del),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name}={p} outside [0, 1]"));
            }
        }
        if self.p_sub + self.p_del > 1.0 {
            return bad("p_sub + p_del exceeds 1");
        }
        if self.n_best == 0 {
            return bad("n_best must be at least 1");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if self.min_syllables == 0 || self.min_syllables > self.max_syllables {
            return bad("need 1 <= min_syllables <= max_syllables");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        let capacity = (CONSONANTS.len() * VOWELS.len() * CONSONANTS.len()) as f64;
        if (self.vocab_size as f64) > capacity.powi(self.max_syllables as i32) / 2.0 {
            return bad("vocab_size too large for the syllable range");
        }
        if self.frames_per_wp == 0 || self.d_acoustic == 0 || self.wp_chunk == 0 {
            return bad("frames_per_wp, d_acoustic and wp_chunk must be positive");
        }
        if !(self.noise_std >= 0.0 && self.beam_noise_std >= 0.0) {
            return bad("noise std must be non-negative");
        }
        Ok(())
    }
}

/// Distinct consonant-vowel-consonant words, determined by size and seed.
pub fn vocabulary(cfg: &ChannelConfig) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.vocab_seed);
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::with_capacity(cfg.vocab_size);
    while words.len() < cfg.vocab_size {
        let syllables = rng.random_range(cfg.min_syllables..=cfg.max_syllables);
        let mut w = String::with_capacity(3 * syllables);
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(&mut rng).expect("non-empty") as char);
            w.push(*VOWELS.choose(&mut rng).expect("non-empty") as char);
            w.push(*CONSONANTS.choose(&mut rng).expect("non-empty") as char);
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Split a word into pieces of at most `chunk` characters; the first piece
/// carries `marker`.
pub fn tokenize(word: &str, chunk: usize, marker: &str) -> Result<Vec<String>, DataError> {
    if word.is_empty() {
        return Err(DataError::EmptyWord);
    }
    let chars: Vec<char> = word.chars().collect();
    Ok(chars
        .chunks(chunk.max(1))
        .enumerate()
        .map(|(i, c)| {
            let piece: String = c.iter().collect();
            if i == 0 {
                format!("{marker}{piece}")
            } else {
                piece
            }
        })
        .collect())
}

pub fn tokenize_words<S: AsRef<str>>(
    words: &[S],
    chunk: usize,
    marker: &str,
) -> Result<Vec<String>, DataError> {
    let mut out = Vec::new();
    for w in words {
        out.extend(tokenize(w.as_ref(), chunk, marker)?);
    }
    Ok(out)
}

/// What the channel did to one position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelOp {
    Keep(String),
    Delete(String),
    Substitute { from: String, to: String },
    Insert(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub words: Vec<String>,
    pub ops: Vec<ChannelOp>,
}

impl Corruption {
    pub fn edits(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| !matches!(op, ChannelOp::Keep(_)))
            .count()
    }
}

/// Per reference word: delete with `p_del`, substitute with `p_sub` (uniform
/// over the other vocabulary words), else keep; then insert a random word
/// with `p_ins`.
pub fn corrupt<R: Rng>(
    reference: &[String],
    cfg: &ChannelConfig,
    vocab: &[String],
    rng: &mut R,
) -> Corruption {
    let mut words = Vec::with_capacity(reference.len() + 2);
    let mut ops = Vec::with_capacity(reference.len() + 2);
    for w in reference {
        let u: f64 = rng.random();
        if u < cfg.p_del {
            ops.push(ChannelOp::Delete(w.clone()));
        } else if u < cfg.p_del + cfg.p_sub {
            let to = loop {
                let cand = vocab.choose(rng).expect("vocabulary is non-empty");
                if cand != w {
                    break cand.clone();
                }
            };
            words.push(to.clone());
            ops.push(ChannelOp::Substitute {
                from: w.clone(),
                to,
            });
        } else {
            words.push(w.clone());
            ops.push(ChannelOp::Keep(w.clone()));
        }
        if rng.random::<f64>() < cfg.p_ins {
            let ins = vocab.choose(rng).expect("vocabulary is non-empty").clone();
            words.push(ins.clone());
            ops.push(ChannelOp::Insert(ins));
        }
    }
    Corruption { words, ops }
}

/// Fixed pseudo-random embedding of a word-piece, seeded by its SHA-256.
pub fn wp_code(wp: &str, d: usize) -> Vec<f64> {
    let digest = Sha256::digest(wp.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    (0..d).map(|_| normal.sample(&mut rng)).collect()
}

/// `[n_wps, d]` matrix of word-piece codes.
pub fn wp_codes<S: AsRef<str>>(wps: &[S], d: usize) -> Tensor {
    let values = wps.iter().flat_map(|w| wp_code(w.as_ref(), d)).collect();
    Tensor::from_parts(vec![wps.len(), d], values)
}

/// Each reference piece contributes `frames_per_wp` copies of its code plus
/// Gaussian noise.
pub fn synth_acoustics<R: Rng, S: AsRef<str>>(
    reference_wps: &[S],
    frames_per_wp: usize,
    d: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<Tensor, DataError> {
    let normal = Normal::new(0.0, noise_std).map_err(|e| DataError::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(reference_wps.len() * frames_per_wp * d);
    for wp in reference_wps {
        let code = wp_code(wp.as_ref(), d);
        for _ in 0..frames_per_wp {
            values.extend(code.iter().map(|c| c + normal.sample(rng)));
        }
    }
    Ok(Tensor::new(
        vec![reference_wps.len() * frames_per_wp, d],
        values,
    )?)
}

pub(crate) fn synth_acoustics_seeded<S: AsRef<str>>(
    wps: &[S],
    recipe: &AcousticRecipe,
) -> Result<Tensor, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    synth_acoustics(
        wps,
        recipe.frames_per_wp,
        recipe.d_a,
        recipe.noise_std,
        &mut rng,
    )
}

/// Which part of the corpus an utterance belongs to; keys its RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

pub fn utterance_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.tag() << 40) | index as u64);
    rng
}

/// Generate one utterance with its n-best list.
///
/// Candidates are independent channel draws; empty and duplicate hypotheses
/// are redrawn for a bounded number of attempts. The list is ranked by
/// `-(edits) + N(0, beam_noise_std)`.
pub fn gen_utterance(
    cfg: &ChannelConfig,
    vocab: &[String],
    split: Split,
    index: usize,
) -> Result<Utterance, DataError> {
    let mut rng = utterance_rng(cfg.seed, split, index);
    let n_words = rng.random_range(cfg.min_words..=cfg.max_words);
    let reference: Vec<String> = (0..n_words)
        .map(|_| vocab.choose(&mut rng).expect("non-empty").clone())
        .collect();
    let recipe = AcousticRecipe {
        frames_per_wp: cfg.frames_per_wp,
        d_a: cfg.d_acoustic,
        seed: rng.random(),
        noise_std: cfg.noise_std,
        wp_chunk: cfg.wp_chunk,
    };
    let ref_wps = tokenize_words(&reference, cfg.wp_chunk, WORD_START)?;
    let acoustic = synth_acoustics_seeded(&ref_wps, &recipe)?;

    let mut candidates: Vec<Corruption> = Vec::with_capacity(cfg.n_best);
    let max_attempts = 32 * cfg.n_best;
    let mut attempts = 0;
    while candidates.len() < cfg.n_best {
        let c = corrupt(&reference, cfg, vocab, &mut rng);
        attempts += 1;
        let acceptable = !c.words.is_empty() && candidates.iter().all(|o| o.words != c.words);
        if acceptable || attempts > max_attempts {
            candidates.push(c);
        }
    }
    let beam =
        Normal::new(0.0, cfg.beam_noise_std).map_err(|e| DataError::Config(e.to_string()))?;
    let mut scored: Vec<(f64, Corruption)> = candidates
        .into_iter()
        .map(|c| (-(c.edits() as f64) + beam.sample(&mut rng), c))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut hypotheses = Vec::with_capacity(scored.len());
    for (rank, (score, c)) in scored.into_iter().enumerate() {
        let wps = tokenize_words(&c.words, cfg.wp_chunk, WORD_START)?;
        let mut h = Hypothesis::from_wps(rank, wps, score)?;
        h.channel_edits = Some(c.edits());
        hypotheses.push(h);
    }
    Ok(Utterance {
        utterance_id: format!("{}-{index:06}", split.name()),
        reference,
        acoustic,
        acoustic_recipe: Some(recipe),
        hypotheses,
    })
}

pub fn gen_corpus(
    cfg: &ChannelConfig,
    split: Split,
    count: usize,
) -> Result<Vec<Utterance>, DataError> {
    cfg.validate()?;
    let vocab = vocabulary(cfg);
    (0..count)
        .map(|i| gen_utterance(cfg, &vocab, split, i))
        .collect()
}
