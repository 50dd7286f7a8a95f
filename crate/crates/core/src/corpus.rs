//! In-memory corpus types and the JSONL dataset schema.
//!
//! One line per utterance:
//!
//! ```json
//! {"utterance_id": "train-000000",
//!  "reference": ["bak", "tulsem"],
//!  "acoustic": {"frames_per_wp": 2, "d_a": 16, "seed": 123, "noise_std": 0.3, "wp_chunk": 3},
//!  "hypotheses": [{"beam_rank": 0, "wp_tokens": ["▁bak", "▁tul", "sem"], "sim_score": -0.1}]}
//! ```
//!
//! `acoustic` is either the regeneration recipe above or an inline `[[f64]]`
//! frame matrix; both load to the same matrix.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{
    align_words, wp_to_words, AlignOptions, AlignmentLabels, WordBoundaries, WORD_START,
};
use crate::datagen::{synth_acoustics_seeded, tokenize_words};
use crate::error::DataError;
use crate::tensor::Tensor;

/// One recognizer output.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub beam_rank: usize,
    pub wp_tokens: Vec<String>,
    pub boundaries: WordBoundaries,
    pub sim_score: f64,
    pub channel_edits: Option<usize>,
}

impl Hypothesis {
    pub fn from_wps(
        beam_rank: usize,
        wp_tokens: Vec<String>,
        sim_score: f64,
    ) -> Result<Self, DataError> {
        let boundaries = wp_to_words(&wp_tokens, WORD_START)?;
        Ok(Self {
            beam_rank,
            wp_tokens,
            boundaries,
            sim_score,
            channel_edits: None,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.boundaries.words
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub reference: Vec<String>,
    /// `T × d_a` frames derived from the reference.
    pub acoustic: Tensor,
    pub acoustic_recipe: Option<AcousticRecipe>,
    /// Sorted by beam rank.
    pub hypotheses: Vec<Hypothesis>,
}

impl Utterance {
    pub fn top(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn labels(&self, hyp: &Hypothesis) -> AlignmentLabels {
        align_words(hyp.words(), &self.reference, AlignOptions::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticRecipe {
    pub frames_per_wp: usize,
    pub d_a: usize,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_chunk")]
    pub wp_chunk: usize,
}

fn default_noise() -> f64 {
    0.3
}

fn default_chunk() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AcousticRecord {
    Recipe(AcousticRecipe),
    Inline(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub beam_rank: usize,
    pub wp_tokens: Vec<String>,
    pub sim_score: f64,
    /// Edits the synthetic channel applied; diagnostics only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_edits: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub reference: Vec<String>,
    pub acoustic: AcousticRecord,
    pub hypotheses: Vec<HypothesisRecord>,
}

impl UtteranceRecord {
    pub fn from_utterance(u: &Utterance, inline_acoustic: bool) -> Self {
        let acoustic = match (&u.acoustic_recipe, inline_acoustic) {
            (Some(r), false) => AcousticRecord::Recipe(*r),
            _ => AcousticRecord::Inline(u.acoustic.to_rows()),
        };
        Self {
            utterance_id: u.utterance_id.clone(),
            reference: u.reference.clone(),
            acoustic,
            hypotheses: u
                .hypotheses
                .iter()
                .map(|h| HypothesisRecord {
                    beam_rank: h.beam_rank,
                    wp_tokens: h.wp_tokens.clone(),
                    sim_score: h.sim_score,
                    channel_edits: h.channel_edits,
                })
                .collect(),
        }
    }

    pub fn into_utterance(self) -> Result<Utterance, DataError> {
        let invalid = |detail: String| DataError::Invalid {
            id: self.utterance_id.clone(),
            detail,
        };
        let (acoustic, recipe) = match &self.acoustic {
            AcousticRecord::Recipe(r) => {
                let wps = tokenize_words(&self.reference, r.wp_chunk, WORD_START)?;
                (synth_acoustics_seeded(&wps, r)?, Some(*r))
            }
            AcousticRecord::Inline(rows) => (Tensor::from_rows(rows)?, None),
        };
        let mut hypotheses = Vec::with_capacity(self.hypotheses.len());
        for h in &self.hypotheses {
            let mut hyp = Hypothesis::from_wps(h.beam_rank, h.wp_tokens.clone(), h.sim_score)?;
            hyp.channel_edits = h.channel_edits;
            hypotheses.push(hyp);
        }
        hypotheses.sort_by_key(|h| h.beam_rank);
        if hypotheses
            .windows(2)
            .any(|w| w[0].beam_rank == w[1].beam_rank)
        {
            return Err(invalid("duplicate beam ranks".into()));
        }
        Ok(Utterance {
            utterance_id: self.utterance_id,
            reference: self.reference,
            acoustic,
            acoustic_recipe: recipe,
            hypotheses,
        })
    }
}

pub fn write_jsonl<W: Write>(
    out: W,
    utterances: &[Utterance],
    inline_acoustic: bool,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(out);
    for u in utterances {
        let rec = UtteranceRecord::from_utterance(u, inline_acoustic);
        serde_json::to_writer(&mut w, &rec).map_err(|e| DataError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Utterance>, DataError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line).map_err(|e| DataError::Json {
            line: i + 1,
            source: e,
        })?;
        out.push(rec.into_utterance()?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Utterance>, DataError> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn save_dataset(
    path: &Path,
    utterances: &[Utterance],
    inline_acoustic: bool,
) -> Result<(), DataError> {
    write_jsonl(File::create(path)?, utterances, inline_acoustic)
}
