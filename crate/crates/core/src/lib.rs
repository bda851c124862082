//! Graph feature-message passing: precompute multi-hop propagated features once,
//! then train node classifiers on them without touching the graph again.

pub mod config;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod formats;
pub mod graph;
pub mod matrix;
pub mod message_agg;
pub mod model;
pub mod pipeline;
pub mod propagation;
pub mod train;

pub use error::{Error, Result};
pub use graph::{build_csr, BuildOptions, CsrGraph};
pub use matrix::Matrix;
pub use message_agg::MessageAggKind;
pub use model::{ModelParams, Variant, VariantConfig};
pub use propagation::{make_operator, propagate, MessageSet, OperatorKind, PropagationOperator};
