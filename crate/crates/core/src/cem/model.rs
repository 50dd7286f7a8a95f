//! Feature extractor and the three prediction heads.
//!
//! The word-piece sequence gets a learned end-of-sequence piece appended, so
//! the transformer produces `M + 1` feature rows. Rows `0..M` are the token
//! features; row `M` feeds the deletion head for the gap after the last word.

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use crate::corpus::Hypothesis;
use crate::datagen::wp_codes;
use crate::error::CemError;
use crate::graph::{Graph, Var};
use crate::nn::{self, ParamSpec};
use crate::tensor::{Init, Parameters, Tensor};

/// Tensors one forward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct CemInput {
    /// `[M, d_a]` fixed codes of the hypothesis word-pieces.
    pub wp_codes: Tensor,
    /// `[T, d_a]` acoustic frames.
    pub acoustic: Tensor,
    pub last_wp_index: Vec<usize>,
}

impl CemInput {
    pub fn new(hyp: &Hypothesis, acoustic: &Tensor) -> Result<Self, CemError> {
        if hyp.wp_tokens.is_empty() {
            return Err(CemError::EmptyHypothesis);
        }
        if acoustic.rows() == 0 {
            return Err(CemError::EmptyAcoustic);
        }
        Ok(Self {
            wp_codes: wp_codes(&hyp.wp_tokens, acoustic.cols()),
            acoustic: acoustic.clone(),
            last_wp_index: hyp.boundaries.last_wp_index.clone(),
        })
    }

    pub fn num_wps(&self) -> usize {
        self.wp_codes.rows()
    }

    pub fn num_words(&self) -> usize {
        self.last_wp_index.len()
    }
}

/// Graph handles produced by [`forward_graph`]; heads absent from the
/// variant are `None`.
#[derive(Debug, Clone, Copy)]
pub struct CemVars {
    pub token_probs: Option<Var>,
    pub word_probs: Option<Var>,
    pub deletion_log_rates: Option<Var>,
    pub utt_score: Option<Var>,
    pub utt_weights: Option<Var>,
}

/// Plain-value model outputs. Probability rows are `(c, i, s)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CemOutput {
    pub token_probs: Option<Vec<[f64; 3]>>,
    pub word_probs: Option<Vec<[f64; 3]>>,
    pub deletion_log_rates: Option<Vec<f64>>,
    pub utt_score: Option<f64>,
    /// Pooling weights over the `M` token features.
    pub utt_weights: Option<Vec<f64>>,
}

fn triples(values: &[f64]) -> Vec<[f64; 3]> {
    values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl CemOutput {
    pub fn from_graph(g: &Graph, vars: &CemVars) -> Self {
        Self {
            token_probs: vars.token_probs.map(|v| triples(g.value(v))),
            word_probs: vars.word_probs.map(|v| triples(g.value(v))),
            deletion_log_rates: vars.deletion_log_rates.map(|v| g.value(v).to_vec()),
            utt_score: vars.utt_score.map(|v| g.scalar(v)),
            utt_weights: vars.utt_weights.map(|v| g.value(v).to_vec()),
        }
    }

    pub fn num_words(&self) -> Option<usize> {
        self.word_probs.as_ref().map(Vec::len)
    }
}

pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let h = cfg.head_hidden();
    let mut specs = nn::linear_specs("embed", cfg.d_acoustic, d);
    specs.push(("eos".to_string(), 1, d, Init::Glorot));
    for b in 0..cfg.blocks {
        specs.extend(nn::transformer_block_specs(
            &format!("block{b}"),
            cfg.block_dims(),
        ));
    }
    specs.extend(nn::layer_norm_specs("final_ln", d));
    if cfg.variant.has_word() {
        specs.extend(nn::mlp_specs("word_head", &[d, h, 3]));
    }
    if cfg.variant.has_deletion() {
        specs.extend(nn::mlp_specs("deletion_head", &[d, h, (h / 2).max(1), 1]));
    }
    if cfg.variant.has_utterance() {
        specs.extend(nn::linear_specs("utt_attn.proj", d, h));
        specs.push(("utt_attn.context".to_string(), h, 1, Init::Glorot));
        specs.extend(nn::mlp_specs("utt_head", &[d, h, 1]));
    }
    specs
}

/// Build the forward pass on `g` with explicit parameters.
pub fn forward_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &Parameters,
    input: &CemInput,
) -> Result<CemVars, CemError> {
    let m = input.num_wps();
    if m == 0 {
        return Err(CemError::EmptyHypothesis);
    }
    if input.acoustic.rows() == 0 {
        return Err(CemError::EmptyAcoustic);
    }
    if input.wp_codes.cols() != cfg.d_acoustic || input.acoustic.cols() != cfg.d_acoustic {
        return Err(CemError::Config(format!(
            "input width {}/{} does not match d_acoustic={}",
            input.wp_codes.cols(),
            input.acoustic.cols(),
            cfg.d_acoustic
        )));
    }
    if input.last_wp_index.last().is_some_and(|&i| i + 1 != m)
        || input.last_wp_index.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(CemError::Config(
            "word boundaries do not cover the word-pieces".into(),
        ));
    }
    let d = cfg.d_model;

    let codes = g.constant(&input.wp_codes)?;
    let emb = nn::linear(g, params, "embed", codes)?;
    let eos = g.param(params, "eos")?;
    let mut x = g.concat_rows(&[emb, eos])?;
    let mut acoustic = g.constant(&input.acoustic)?;
    if cfg.positional_encoding {
        let pe = g.constant(&nn::positional_encoding(m + 1, d))?;
        x = g.add(x, pe)?;
        let pe_a = g.constant(&nn::positional_encoding(
            input.acoustic.rows(),
            cfg.d_acoustic,
        ))?;
        acoustic = g.add(acoustic, pe_a)?;
    }
    for b in 0..cfg.blocks {
        x = nn::transformer_block(
            g,
            params,
            &format!("block{b}"),
            cfg.block_dims(),
            x,
            acoustic,
        )?;
    }
    let features = nn::layer_norm(g, params, "final_ln", x)?;
    let token_rows: Vec<usize> = (0..m).collect();
    let tokens = g.gather_rows(features, &token_rows)?;

    let mut vars = CemVars {
        token_probs: None,
        word_probs: None,
        deletion_log_rates: None,
        utt_score: None,
        utt_weights: None,
    };
    if cfg.variant.has_word() {
        let logits = nn::mlp(g, params, "word_head", 2, tokens)?;
        let probs = g.softmax_rows(logits)?;
        vars.token_probs = Some(probs);
        vars.word_probs = Some(g.gather_rows(probs, &input.last_wp_index)?);
    }
    if cfg.variant.has_deletion() {
        let mut gap_rows = input.last_wp_index.clone();
        gap_rows.push(m);
        let gap_features = g.gather_rows(features, &gap_rows)?;
        vars.deletion_log_rates = Some(nn::mlp(g, params, "deletion_head", 3, gap_features)?);
    }
    if cfg.variant.has_utterance() {
        let u = nn::linear(g, params, "utt_attn.proj", tokens)?;
        let u = g.tanh(u)?;
        let context = g.param(params, "utt_attn.context")?;
        let scores = g.matmul(u, context)?;
        let scores = g.transpose(scores)?;
        let alpha = g.softmax_rows(scores)?;
        let pooled = g.matmul(alpha, tokens)?;
        let logit = nn::mlp(g, params, "utt_head", 2, pooled)?;
        vars.utt_score = Some(g.sigmoid(logit)?);
        vars.utt_weights = Some(alpha);
    }
    Ok(vars)
}

/// Checkpoint header for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub toolkit_version: String,
    pub model: ModelConfig,
    pub seed: u64,
}

/// A model configuration together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CemModel {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl CemModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, CemError> {
        config.validate()?;
        Ok(Self {
            config,
            params: Parameters::initialize(seed, &param_specs(&config)),
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn forward_input(&self, input: &CemInput) -> Result<CemOutput, CemError> {
        let mut g = Graph::new();
        let vars = forward_graph(&mut g, &self.config, &self.params, input)?;
        Ok(CemOutput::from_graph(&g, &vars))
    }

    pub fn forward(&self, hyp: &Hypothesis, acoustic: &Tensor) -> Result<CemOutput, CemError> {
        self.forward_input(&CemInput::new(hyp, acoustic)?)
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format: "cemkit-checkpoint".into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            model: self.config,
            seed: self.params.rng_seed,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CemError> {
        crate::checkpoint::encode(&self.header(), &self.params)
            .map_err(|e| CemError::Config(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::error::CheckpointError> {
        crate::checkpoint::save(path, &self.header(), &self.params)
    }

    /// Load a checkpoint and check its tensors against the recorded architecture.
    pub fn load(path: &std::path::Path) -> Result<Self, CemError> {
        let (header, mut params): (CheckpointHeader, Parameters) =
            crate::checkpoint::load(path).map_err(|e| CemError::Config(e.to_string()))?;
        header.model.validate()?;
        let specs = param_specs(&header.model);
        if specs.len() != params.len() {
            return Err(CemError::Config(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                specs.len()
            )));
        }
        for (name, rows, cols, _) in &specs {
            match params.get(name) {
                Some(t) if t.shape() == [*rows, *cols] => {}
                _ => {
                    return Err(CemError::Config(format!(
                        "checkpoint tensor `{name}` missing or misshapen"
                    )))
                }
            }
        }
        params.rng_seed = header.seed;
        Ok(Self {
            config: header.model,
            params,
        })
    }
}
