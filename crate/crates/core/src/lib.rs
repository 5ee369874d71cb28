//! Graph-augmented instruction-tuning data and retriever training for
//! text-attributed graphs: Personalized PageRank neighborhoods, GraphSAGE
//! label pruning and prototypes, a KL-trained dual-encoder retriever,
//! prompt templates and exact-match evaluation.

pub mod embed;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod lm;
pub mod pipeline;
pub mod ppr;
pub mod retriever;
pub mod synth;
pub mod templater;
pub mod text;

mod binio;

pub use error::{Error, Result};
pub use graph::{ingest, Split, TextAttributedGraph};
