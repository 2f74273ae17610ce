//! Dual-level multi-interest modeling for sequential recommendation.
//!
//! The pipeline ingests timestamped user-item interactions, derives semantic
//! interest clusters per user (via a chat-completion LLM or a deterministic
//! offline substitute), models collaborative interests with capsule dynamic
//! routing, aligns the two levels with attention, synthesizes compact crowd
//! users whose clusterings drive a contrastive item-representation loss, and
//! evaluates top-n retrieval quality.

pub mod config;
pub mod data;
pub mod error;
pub mod fixture;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod synthesis;
pub mod train_eval;

pub use error::Error;
