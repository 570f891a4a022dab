//! Knowledge-guided prompting for LLM-based synthetic tabular data.
//!
//! The pipeline: load a real table ([`table`]), describe it with knowledge
//! tiers ([`knowledge`]), serialize example rows into prompts
//! ([`row_text`]), query a backend chunk by chunk ([`generation`]), parse
//! the answers back into a table and score it ([`metrics`]). The
//! [`experiments`] module wraps this into sweeps and ablations.

pub mod error;
pub mod experiments;
pub mod generation;
pub mod knowledge;
pub mod metrics;
pub mod row_text;
pub mod store;
pub mod symexpr;
pub mod table;

pub use error::*;
