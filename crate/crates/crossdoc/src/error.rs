//! Crate-wide error type.

use thiserror::Error;

/// One rejected bag from dataset validation, with the reason it failed.
#[derive(Debug, Clone)]
pub struct BagError {
    pub bag_id: String,
    pub reason: String,
}

impl std::fmt::Display for BagError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "bag {:?}: {}", self.bag_id, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error("dataset validation failed for {} bag(s):\n{}", .0.len(),
            .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<BagError>),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing representation for entity {entity:?} in path {path}")]
    MissingRepr { entity: String, path: usize },

    #[error("input of {len} tokens exceeds the encoder maximum of {max}; run the context filter first")]
    OverLength { len: usize, max: usize },

    #[error("relation matrix has {cells} cells, above the attention budget of {budget}; lower graph.node_budget")]
    AttentionBudget { cells: usize, budget: usize },

    #[error("shape mismatch in {op}: {details}")]
    Shape { op: String, details: String },

    #[error("training diverged at epoch {epoch}: loss is not finite ({loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unknown ablation variant {name:?}; valid variants: {}", .valid.join(", "))]
    UnknownVariant { name: String, valid: Vec<String> },

    #[error("label space mismatch: {0}")]
    LabelSpaceMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
