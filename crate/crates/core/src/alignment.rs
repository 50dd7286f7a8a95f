//! Levenshtein alignment of hypotheses against references and the three
//! kinds of ground-truth labels derived from it: per-word edit tags,
//! inter-word deletion counts, and the utterance correctness bit.

use serde::{Deserialize, Serialize};

use crate::error::AlignError;

/// Default word-start marker carried by word-initial word-pieces.
pub const WORD_START: &str = "\u{2581}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Cor,
    Sub,
    Ins,
}

impl Tag {
    /// Column of this tag in a `(c, i, s)` probability row.
    pub fn class_index(self) -> usize {
        match self {
            Tag::Cor => 0,
            Tag::Ins => 1,
            Tag::Sub => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Cor => "cor",
            Tag::Sub => "sub",
            Tag::Ins => "ins",
        }
    }
}

/// Words recovered from a word-piece sequence and the index of each word's
/// final piece.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WordBoundaries {
    pub words: Vec<String>,
    pub last_wp_index: Vec<usize>,
}

impl WordBoundaries {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Group word-pieces into words at each `marker`-prefixed piece.
pub fn wp_to_words<S: AsRef<str>>(
    tokens: &[S],
    marker: &str,
) -> Result<WordBoundaries, AlignError> {
    let mut out = WordBoundaries::default();
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        match tok.strip_prefix(marker) {
            Some(rest) => {
                out.words.push(rest.to_string());
                out.last_wp_index.push(i);
            }
            None if i == 0 => {
                return Err(AlignError::MissingMarker {
                    token: tok.to_string(),
                    marker: marker.to_string(),
                })
            }
            None => {
                out.words
                    .last_mut()
                    .expect("first token has a marker")
                    .push_str(tok);
                *out.last_wp_index.last_mut().expect("non-empty") = i;
            }
        }
    }
    Ok(out)
}

/// One step of an alignment, in left-to-right order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    /// A reference token with no hypothesis counterpart.
    Delete,
    /// A hypothesis token with no reference counterpart.
    Insert,
}

/// Unit-cost Levenshtein alignment with a fixed backtrace preference:
/// match, then substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(hyp: &[T], reference: &[T]) -> Vec<EditOp> {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j as u32;
    }
    for i in 1..=n {
        dp[i * w] = i as u32;
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + u32::from(hyp[i - 1] != reference[j - 1]);
            let del = dp[i * w + j - 1] + 1;
            let ins = dp[(i - 1) * w + j] + 1;
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let prev = dp[(i - 1) * w + j - 1];
            let same = hyp[i - 1] == reference[j - 1];
            if same && prev == here {
                ops.push(EditOp::Match);
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && prev + 1 == here {
                ops.push(EditOp::Substitute);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && dp[i * w + j - 1] + 1 == here {
            ops.push(EditOp::Delete);
            j -= 1;
        } else {
            ops.push(EditOp::Insert);
            i -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Edit counts of one alignment, serialised as `{C, S, I, D}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    #[serde(rename = "C")]
    pub correct: usize,
    #[serde(rename = "S")]
    pub substitutions: usize,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn reference_len(&self) -> usize {
        self.correct + self.substitutions + self.deletions
    }

    pub fn hypothesis_len(&self) -> usize {
        self.correct + self.substitutions + self.insertions
    }

    /// `(S + I + D) / ref_len`. An empty reference divides by one instead, so
    /// the result is the insertion count.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.reference_len().max(1) as f64
    }
}

/// Ground-truth labels for one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentLabels {
    pub word_tags: Vec<Tag>,
    /// `L + 1` counts; entry `j` is the number of reference words deleted
    /// just before hypothesis word `j` (the last entry: after the final word).
    pub deletion_gaps: Vec<usize>,
    pub e_utt: u8,
    pub counts: EditCounts,
    pub wer: f64,
    /// Set when the reference is empty and `wer` fell back to the insertion count.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_reference: bool,
}

impl AlignmentLabels {
    pub fn from_ops(ops: &[EditOp]) -> Self {
        let mut tags = Vec::new();
        let mut gaps = vec![0usize];
        let mut counts = EditCounts::default();
        for op in ops {
            match op {
                EditOp::Match => {
                    counts.correct += 1;
                    tags.push(Tag::Cor);
                    gaps.push(0);
                }
                EditOp::Substitute => {
                    counts.substitutions += 1;
                    tags.push(Tag::Sub);
                    gaps.push(0);
                }
                EditOp::Insert => {
                    counts.insertions += 1;
                    tags.push(Tag::Ins);
                    gaps.push(0);
                }
                EditOp::Delete => {
                    counts.deletions += 1;
                    *gaps.last_mut().expect("non-empty") += 1;
                }
            }
        }
        Self {
            word_tags: tags,
            deletion_gaps: gaps,
            e_utt: u8::from(counts.errors() == 0),
            wer: counts.wer(),
            empty_reference: counts.reference_len() == 0,
            counts,
        }
    }

    pub fn num_words(&self) -> usize {
        self.word_tags.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Lowercase and trim words before comparing them.
    pub normalize: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

fn normalize_word(w: &str) -> String {
    w.trim().to_lowercase()
}

/// Word-level labels for a hypothesis against its reference.
pub fn align_words<S: AsRef<str>>(
    hyp: &[S],
    reference: &[S],
    opts: AlignOptions,
) -> AlignmentLabels {
    let key = |w: &S| {
        if opts.normalize {
            normalize_word(w.as_ref())
        } else {
            w.as_ref().to_string()
        }
    };
    let h: Vec<String> = hyp.iter().map(key).collect();
    let r: Vec<String> = reference.iter().map(key).collect();
    AlignmentLabels::from_ops(&align(&h, &r))
}

/// Word-piece level tags, one per hypothesis piece. Deleted reference pieces
/// have no hypothesis position and so never appear.
pub fn align_wp<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Vec<Tag> {
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    align(&h, &r)
        .into_iter()
        .filter_map(|op| match op {
            EditOp::Match => Some(Tag::Cor),
            EditOp::Substitute => Some(Tag::Sub),
            EditOp::Insert => Some(Tag::Ins),
            EditOp::Delete => None,
        })
        .collect()
}

/// Counts and WER stored in a label record.
pub fn edit_counts(labels: &AlignmentLabels) -> (EditCounts, f64) {
    (labels.counts, labels.wer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn word_pieces_to_words() {
        let b = wp_to_words(&["▁go", "▁morn", "ing"], WORD_START).unwrap();
        assert_eq!(b.words, ["go", "morning"]);
        assert_eq!(b.last_wp_index, [0, 2]);
        let empty: [&str; 0] = [];
        assert_eq!(
            wp_to_words(&empty, WORD_START).unwrap(),
            WordBoundaries::default()
        );
    }

    #[test]
    fn first_piece_must_start_a_word() {
        let err = wp_to_words(&["ing", "▁go"], WORD_START).unwrap_err();
        assert!(matches!(err, AlignError::MissingMarker { .. }));
    }

    #[test]
    fn custom_marker() {
        let b = wp_to_words(&["_go", "_morn", "ing"], "_").unwrap();
        assert_eq!(b.words, ["go", "morning"]);
    }

    #[test]
    fn go_morning_word_tags() {
        let l = align_words(
            &s(&["go", "morning"]),
            &s(&["good", "morning"]),
            AlignOptions::default(),
        );
        assert_eq!(l.word_tags, [Tag::Sub, Tag::Cor]);
        assert_eq!(l.deletion_gaps, [0, 0, 0]);
        assert_eq!(l.e_utt, 0);
        assert_eq!(l.wer, 0.5);
    }

    #[test]
    fn go_morning_wp_tags_ignore_the_deleted_piece() {
        let tags = align_wp(&["▁go", "▁morn", "ing"], &["▁go", "od", "▁morn", "ing"]);
        assert_eq!(tags, [Tag::Cor, Tag::Cor, Tag::Cor]);
    }

    #[test]
    fn leading_deletion_lands_in_the_first_gap() {
        let l = align_words(
            &s(&["absolut", "green", "philadelphia", "pa"]),
            &s(&["upsal", "at", "greene", "philadelphia", "pa"]),
            AlignOptions::default(),
        );
        assert_eq!(l.word_tags, [Tag::Sub, Tag::Sub, Tag::Cor, Tag::Cor]);
        assert_eq!(l.deletion_gaps, [1, 0, 0, 0, 0]);
        let (c, wer) = edit_counts(&l);
        assert_eq!(
            (c.correct, c.substitutions, c.insertions, c.deletions),
            (2, 2, 0, 1)
        );
        assert!((wer - 0.6).abs() < 1e-15);
    }

    #[test]
    fn identical_sequences() {
        let w = s(&["a", "b", "c", "d", "e"]);
        let l = align_words(&w, &w, AlignOptions::default());
        assert!(l.word_tags.iter().all(|t| *t == Tag::Cor));
        assert_eq!(l.deletion_gaps, [0; 6]);
        assert_eq!((l.e_utt, l.wer), (1, 0.0));
        assert_eq!(align_wp(&w, &w), vec![Tag::Cor; 5]);
    }

    #[test]
    fn empty_inputs() {
        let none: Vec<String> = vec![];
        let l = align_words(&none, &none, AlignOptions::default());
        assert_eq!(l.counts, EditCounts::default());
        assert_eq!(l.wer, 0.0);
        assert_eq!(l.deletion_gaps, [0]);
        assert_eq!(l.e_utt, 1);

        let l = align_words(&s(&["x", "y"]), &none, AlignOptions::default());
        assert!(l.empty_reference);
        assert_eq!(l.wer, 2.0);
        assert_eq!(l.word_tags, [Tag::Ins, Tag::Ins]);

        let l = align_words(&none, &s(&["x", "y", "z"]), AlignOptions::default());
        assert_eq!(l.deletion_gaps, [3]);
        assert_eq!(l.wer, 1.0);
    }

    #[test]
    fn normalization_is_toggleable() {
        let h = s(&[" Hello", "World "]);
        let r = s(&["hello", "world"]);
        assert_eq!(align_words(&h, &r, AlignOptions::default()).e_utt, 1);
        assert_eq!(
            align_words(&h, &r, AlignOptions { normalize: false })
                .counts
                .substitutions,
            2
        );
    }

    #[test]
    fn labels_serialize_with_normative_names() {
        let l = align_words(
            &s(&["go", "morning"]),
            &s(&["good", "morning"]),
            AlignOptions::default(),
        );
        let v = serde_json::to_value(&l).unwrap();
        assert_eq!(v["word_tags"], serde_json::json!(["sub", "cor"]));
        assert_eq!(
            v["counts"],
            serde_json::json!({"C": 1, "S": 1, "I": 0, "D": 0})
        );
    }

    proptest! {
        #[test]
        fn label_identities(
            hyp in proptest::collection::vec(0u8..4, 0..12),
            reference in proptest::collection::vec(0u8..4, 0..12),
        ) {
            let h: Vec<String> = hyp.iter().map(|v| v.to_string()).collect();
            let r: Vec<String> = reference.iter().map(|v| v.to_string()).collect();
            let l = align_words(&h, &r, AlignOptions::default());
            let c = l.counts;
            prop_assert_eq!(c.correct + c.substitutions + c.insertions, h.len());
            prop_assert_eq!(c.correct + c.substitutions + c.deletions, r.len());
            prop_assert_eq!(l.deletion_gaps.len(), h.len() + 1);
            prop_assert_eq!(l.deletion_gaps.iter().sum::<usize>(), c.deletions);
            prop_assert_eq!(l.e_utt == 1, c.errors() == 0);
            if !r.is_empty() {
                let via_hyp = c.errors() as f64 / (h.len() + c.deletions - c.insertions) as f64;
                prop_assert_eq!(via_hyp, l.wer);
            }
            prop_assert_eq!(align_words(&h, &r, AlignOptions::default()), l);
        }
    }
}
