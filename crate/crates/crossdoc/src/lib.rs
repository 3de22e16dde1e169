//! Cross-document relation extraction over unified entity graphs.
//!
//! The pipeline: documents are filtered and marked, a sequence encoder
//! produces path-level entity representations, a per-bag entity graph links
//! target, bridge, and non-bridge entities, a graph recurrent network refines
//! the node states, and a relation head with cross-path attention pools
//! per-path predictions into a bag-level score vector. At inference the
//! scores can be calibrated against an auxiliary non-NA classifier and a
//! masked-subgraph forward pass.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod grn;
pub mod nn;
pub mod tape;

pub use config::RunConfig;
pub use data::{Dataset, DocumentBag, LabelSpace};
pub use error::{Error, Result};
