//! Column type annotation with chat-completion models.
//!
//! The crate covers data ingestion ([`dataset`]), prompt serialization
//! ([`serialize`], [`prompt`]), model access with record/replay ([`llm`]),
//! answer parsing ([`parse`]), experiment orchestration ([`pipeline`]),
//! scoring ([`metrics`]), and a TF-IDF + random forest baseline
//! ([`baseline`]).

pub mod baseline;
pub mod cli;
pub mod dataset;
pub mod llm;
pub mod metrics;
pub mod par;
pub mod parse;
pub mod pipeline;
pub mod prompt;
pub mod serialize;
