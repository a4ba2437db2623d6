//! Tooling for conditional task generation: compile annotated datasets and
//! meta-templates into a generator training corpus, turn unannotated text into
//! synthetic instruction-tuning pairs through any completion endpoint, and
//! evaluate adapted models with ranked classification and SQuAD F1.

pub mod template;
pub mod metrics;
pub mod registry;
pub mod dataset_io;
pub mod ctga;
pub mod client;
pub mod generator;
pub mod eval;
pub mod config;
pub mod cli;
