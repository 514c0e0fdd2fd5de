//! Semantic-ID tokenization and generative retrieval at desk scale.
//!
//! Items carry one embedding per modality. A residual-quantization tokenizer
//! maps the fused embedding to a short code sequence (a semantic ID), an
//! inverted index resolves codes back to items, and a small autoregressive
//! model retrieves items by generating codes from user histories.

pub mod corpus;
pub mod error;
pub mod fusion;
pub mod genret;
pub mod numerics;
pub mod parallel;
pub mod pipeline;
pub mod sid;
pub mod sid_index;
pub mod tokenizer;

pub use error::{Error, Result};
pub use parallel::Exec;
pub use sid::SemanticId;
