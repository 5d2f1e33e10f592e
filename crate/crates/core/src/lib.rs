//! Learned sparse retrieval toolkit.
//!
//! The pipeline turns short query/item texts into vocabulary-dimensional
//! sparse vectors with a small trainable encoder, compensates underweighted
//! literal terms through a residual head, trains with windowed top-k pooling
//! plus FLOPS regularization, and serves results from a block-max inverted
//! index with safe pruning. An evaluation harness scores run files against
//! relevance judgments.
//!
//! Modules map one-to-one onto the pipeline stages:
//!
//! - [`corpus`]: vocabulary, tokenization, training-pair ingestion
//! - [`encoder`]: causal prefix-mean encoder with exact analytic gradients
//! - [`head`]: activation transform, pooling, literal residual enhancement
//! - [`training`]: windowed similarity, InfoNCE, FLOPS loss, AdamW loop
//! - [`index`]: block-max inverted index build/persist/load
//! - [`search`]: block-max maxscore retrieval, exhaustive oracle, BM25
//! - [`eval`]: Hit@k, MRR@10, Recall@k, term-overlap cost metric
//! - [`synth`]: planted-synonym dataset generator for end-to-end checks

pub mod bytesio;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod index;
pub mod search;
pub mod sparse;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use sparse::SparseVec;
