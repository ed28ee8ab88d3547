//! Synthetic data generation for dynamic-programming auto-formulation.
//!
//! The crate is organised around an exact finite-MDP engine ([`mdp`]) that
//! executes and verifies every generated solution. On top of it sit the
//! generation pipelines ([`forward`], [`backward`]), the shared data model
//! ([`corpus`]), few-shot retrieval ([`retrieval`]), scenario expansion
//! ([`scenario`]), alignment math ([`align`]) and the benchmark harness
//! ([`eval`]). All LLM traffic goes through [`llm::Gateway`].

pub mod align;
pub mod backward;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod forward;
pub mod llm;
pub mod mdp;
pub mod prompts;
pub mod retrieval;
pub mod scenario;
pub mod tolerance;

pub use tolerance::Tolerance;

/// Crate version written into reproducibility headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Schema version stamped on every persisted JSON-lines record and manifest.
pub const SCHEMA_VERSION: u32 = 1;
