//! Retrieval-augmented long-form article generation.
//!
//! The pipeline has three stages: (a) retrieval-augmented outline
//! generation — a web search clarifies the writing intent, similar-topic
//! outlines retrieved from an exemplar corpus seed a high-quality initial
//! outline; (b) attribute-constrained search — attributes extracted from
//! the outline become search queries, gathered references drive
//! edit-operation outline refinement until convergence; (c) plan-guided
//! writing — a dependency DAG over first-level sections is scheduled into
//! waves and sections are written concurrently under a parallelism cap,
//! then assembled with a globally renumbered bibliography.
//!
//! Every provider (chat, search, embedding) has a live HTTP implementation
//! and a deterministic mock, so the whole pipeline runs hermetically in
//! tests and demos.

pub mod corpus;
pub mod discovery;
pub mod evalkit;
pub mod gateway;
pub mod outline;
pub mod pipeline;
pub mod planner;
pub mod writer;

pub use gateway::{Gateway, GatewayConfig};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
