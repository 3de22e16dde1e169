//! Layered run configuration: built-in defaults, then an optional TOML file,
//! then `--set key=value` overrides. The resolved config is serialized into
//! every checkpoint and report so runs can be reproduced from their artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming a default config file, consulted when no
/// `--config` flag is given.
pub const CONFIG_PATH_ENV: &str = "CROSSDOC_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// `toy` (trainable token embedding + bidirectional recurrent mixing) or
    /// `pretrained` (multi-layer transformer backend loaded from a checkpoint).
    pub kind: String,
    /// Hidden size of the token context vectors. 768 for the pretrained kind.
    pub hidden_dim: usize,
    /// Optional weights file for the pretrained kind.
    pub checkpoint: Option<String>,
    /// Transformer depth for the pretrained kind; ignored by the toy backend.
    pub layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: "toy".into(),
            hidden_dim: 32,
            checkpoint: None,
            layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Cosine-similarity threshold for semantic-related edges (strict `>`).
    pub eta: f64,
    /// Hard cap on node count; lowest-salience non-bridge nodes are dropped
    /// beyond it.
    pub node_budget: usize,
    /// Allow semantic-related edges between entities that never share a path.
    pub cross_path_semantic_edges: bool,
    /// Keep non-bridge entities in the graph (disabled by the NBE ablation).
    pub include_non_bridge: bool,
    /// Build semantic-related edges at all (disabled by the SRE ablation).
    pub semantic_edges: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            eta: 0.6,
            node_budget: 64,
            cross_path_semantic_edges: true,
            include_non_bridge: true,
            semantic_edges: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrnConfig {
    /// Number of synchronous update steps; 0 leaves the initial states
    /// untouched (the GRN ablation).
    pub timesteps: usize,
    /// Share one recurrent cell across timesteps instead of one per step.
    pub share_params: bool,
    /// Include bias vectors in the gate affine maps. Disable for the
    /// exact-equation mode used by the oracle tests.
    pub use_bias: bool,
}

impl Default for GrnConfig {
    fn default() -> Self {
        GrnConfig {
            timesteps: 3,
            share_params: true,
            use_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub attn_layers: usize,
    pub attn_heads: usize,
    /// Maximum flattened cell count (`|V|^2`) the attention stack accepts.
    pub attn_budget: usize,
    /// `componentwise_max` (per-class max over paths) or `best_path`
    /// (whole vector of the path with the highest non-NA mass).
    pub pool: String,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            attn_layers: 2,
            attn_heads: 8,
            attn_budget: 4096,
            pool: "componentwise_max".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebiasConfig {
    pub enabled: bool,
    pub lambda: f64,
    /// Fraction of non-target nodes masked for the bias-side forward pass.
    pub mask_rate: f64,
    /// Use the auxiliary non-NA classifier distribution. When disabled, the
    /// original distribution stands in for it.
    pub use_rela: bool,
    /// Use the masked-subgraph distribution. When disabled, the original
    /// distribution stands in for it.
    pub use_bias: bool,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig {
            enabled: true,
            lambda: 0.1,
            mask_rate: 0.5,
            use_rela: true,
            use_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Bags per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: f64,
    /// Epochs for the second phase (auxiliary classifier on non-NA bags).
    pub aux_epochs: usize,
    pub aux_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 1,
            seed: 0,
            grad_clip: 1.0,
            aux_epochs: 20,
            aux_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Token budget for the context filter (head + tail documents combined).
    pub budget: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { budget: 512 }
    }
}

/// The fully resolved configuration for a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub graph: GraphConfig,
    pub grn: GrnConfig,
    pub head: HeadConfig,
    pub debias: DebiasConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Load from a TOML file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    /// Apply one `key=value` override with a dotted key, e.g.
    /// `grn.timesteps=0` or `debias.lambda=0.05`.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("override {spec:?} is not of the form key=value")))?;
        let mut table: toml::Table = toml::Table::try_from(&*self)
            .map_err(|e| Error::Config(format!("config not representable as TOML: {e}")))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() != 2 {
            return Err(Error::Argument(format!(
                "override key {key:?} must be of the form section.field"
            )));
        }
        let section = table
            .get_mut(parts[0])
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::Argument(format!("unknown config section {:?}", parts[0])))?;
        let parsed: toml::Value = match section.get(parts[1]) {
            Some(toml::Value::String(_)) | None => toml::Value::String(value.to_string()),
            Some(toml::Value::Boolean(_)) => toml::Value::Boolean(value.parse().map_err(|_| {
                Error::Argument(format!("expected a boolean for {key}, got {value:?}"))
            })?),
            Some(toml::Value::Integer(_)) => toml::Value::Integer(value.parse().map_err(|_| {
                Error::Argument(format!("expected an integer for {key}, got {value:?}"))
            })?),
            Some(toml::Value::Float(_)) => toml::Value::Float(value.parse().map_err(|_| {
                Error::Argument(format!("expected a number for {key}, got {value:?}"))
            })?),
            Some(other) => {
                return Err(Error::Argument(format!(
                    "cannot override {key} of type {}",
                    other.type_str()
                )))
            }
        };
        section.insert(parts[1].to_string(), parsed);
        *self = table
            .try_into()
            .map_err(|e| Error::Argument(format!("invalid override {spec:?}: {e}")))?;
        Ok(())
    }

    /// Render as TOML. The output parses back into an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Sanity checks that cut across sections.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.kind != "toy" && self.encoder.kind != "pretrained" {
            return Err(Error::Config(format!(
                "encoder.kind must be \"toy\" or \"pretrained\", got {:?}",
                self.encoder.kind
            )));
        }
        if self.encoder.hidden_dim == 0 || self.encoder.hidden_dim % 2 != 0 {
            return Err(Error::Config(
                "encoder.hidden_dim must be a positive even number".into(),
            ));
        }
        if self.head.attn_heads == 0 || self.encoder.hidden_dim % self.head.attn_heads != 0 {
            return Err(Error::Config(format!(
                "head.attn_heads ({}) must divide encoder.hidden_dim ({})",
                self.head.attn_heads, self.encoder.hidden_dim
            )));
        }
        if self.head.pool != "componentwise_max" && self.head.pool != "best_path" {
            return Err(Error::Config(format!(
                "head.pool must be \"componentwise_max\" or \"best_path\", got {:?}",
                self.head.pool
            )));
        }
        if !(0.0..=1.0).contains(&self.debias.mask_rate) {
            return Err(Error::Config("debias.mask_rate must lie in [0, 1]".into()));
        }
        if self.debias.lambda < 0.0 {
            return Err(Error::Config("debias.lambda must be >= 0".into()));
        }
        if self.train.lr <= 0.0 {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}
