//! Building blocks for generative knowledge graph completion: dataset
//! loading, per-query subgraph context, prompt construction, answer
//! generation, and Hits@k scoring with judged reevaluation.

pub mod datasets;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod infer;
pub mod kg;
pub mod manifest;
pub mod prompt;
pub mod subgraph;

pub use error::{Error, Result};
