use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::ChannelConfig;
use crate::error::CemError;
use crate::nn::BlockDims;

/// Which training objectives (and therefore which heads) a model has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Word confidence only.
    W,
    /// Utterance confidence only.
    U,
    /// Word confidence and deletion counts.
    WD,
    /// Word and utterance confidence.
    WU,
    /// All three.
    WUD,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::W,
        Variant::U,
        Variant::WD,
        Variant::WU,
        Variant::WUD,
    ];

    pub fn has_word(self) -> bool {
        !matches!(self, Variant::U)
    }

    pub fn has_deletion(self) -> bool {
        matches!(self, Variant::WD | Variant::WUD)
    }

    pub fn has_utterance(self) -> bool {
        matches!(self, Variant::U | Variant::WU | Variant::WUD)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::W => "W",
            Variant::U => "U",
            Variant::WD => "WD",
            Variant::WU => "WU",
            Variant::WUD => "WUD",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                CemError::Config(format!(
                    "unknown variant `{s}` (expected W, U, WD, WU or WUD)"
                ))
            })
    }
}

/// Architecture and loss weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    /// Width of the incoming acoustic frames and word-piece codes.
    pub d_acoustic: usize,
    pub positional_encoding: bool,
    pub lambda_deletion: f64,
    pub lambda_utt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::WUD,
            d_model: 32,
            heads: 2,
            blocks: 1,
            ffn_hidden: 64,
            d_acoustic: 16,
            positional_encoding: true,
            lambda_deletion: 0.5,
            lambda_utt: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), CemError> {
        let err = |m: String| Err(CemError::Config(m));
        if self.d_model < 4 || self.heads == 0 || self.d_model % self.heads != 0 {
            return err(format!(
                "d_model={} must be >= 4 and divisible by heads={}",
                self.d_model, self.heads
            ));
        }
        if self.blocks == 0 || self.ffn_hidden == 0 || self.d_acoustic == 0 {
            return err("blocks, ffn_hidden and d_acoustic must be positive".into());
        }
        if !(self.lambda_deletion >= 0.0 && self.lambda_utt >= 0.0) {
            return err("loss weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn block_dims(&self) -> BlockDims {
        BlockDims {
            d: self.d_model,
            d_acoustic: self.d_acoustic,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
        }
    }

    /// Hidden width of the head MLPs and the pooling attention.
    pub fn head_hidden(&self) -> usize {
        (self.d_model / 2).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Fraction of the training utterances held out for validation by
    /// the command-line trainer.
    pub val_fraction: f64,
    /// Train on every n-best entry rather than the top hypothesis only.
    pub all_hypotheses: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            patience: 3,
            seed: 0,
            val_fraction: 0.1,
            all_hypotheses: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CemError> {
        if self.batch_size == 0 {
            return Err(CemError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CemError::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CemError::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything a run needs, as read from a TOML file with `[data]`, `[model]`
/// and `[train]` tables. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(flatten)]
    pub channel: ChannelConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Store acoustic frames inline instead of as a regeneration recipe.
    pub inline_acoustic: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            n_train: 2000,
            n_test: 500,
            inline_acoustic: false,
        }
    }
}

impl CemConfig {
    pub fn from_toml(text: &str) -> Result<Self, CemError> {
        let cfg: CemConfig = toml::from_str(text).map_err(|e| CemError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CemError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CemError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CemError> {
        self.data.channel.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.d_acoustic != self.data.channel.d_acoustic {
            return Err(CemError::Config(format!(
                "model.d_acoustic={} differs from data.d_acoustic={}",
                self.model.d_acoustic, self.data.channel.d_acoustic
            )));
        }
        Ok(())
    }
}
