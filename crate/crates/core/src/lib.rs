//! Agentic retrieval-augmented multiple-choice QA over page-level corpora.

pub mod backends;
pub mod corpus;
pub mod retrieval;
pub mod sparse;
pub mod dense;
pub mod qa;
pub mod eval;
pub mod agent;
pub mod config;
pub mod cli;
