//! Long-term conversational memory with metric-driven forgetting.
//!
//! A [`store::MemoryStore`] keeps one record per user utterance. Each record
//! carries arousal, perplexity, an LLM importance estimate and two recall
//! counters. After every session the store is pruned by strategy: keep
//! everything, keep the most recently recalled, or keep the records with
//! the highest learned strength.

pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod forgetting;
pub mod memory;
pub mod retrieval;
pub mod scoring;
pub mod server;
pub mod session;
pub mod store;

pub use error::{Error, Result};
pub use forgetting::{ForgettingReport, Strategy, StrategyKind};
pub use memory::{
    compute_importance, compute_strength, MemoryId, MemoryRecord, MetricVector, WeightVector,
};
pub use retrieval::{cosine_similarity, retrieve_top_k, RetrievalQuery, RetrievalResult};
pub use store::{load_store, save_store, MemoryStore};
pub use config::EngineConfig;
pub use engine::{ChatEngine, TurnResult};
