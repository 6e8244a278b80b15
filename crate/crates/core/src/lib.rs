//! Keeping unit tests in step with production changes: mine historical
//! change pairs, retrieve similar examples, decide whether a test is
//! obsolete, and repair it under compile/test/coverage validation.

pub mod api;
pub mod changemining;
pub mod config;
pub mod fsutil;
pub mod identifier;
pub mod knowledgebase;
pub mod llmgateway;
pub mod metrics;
pub mod pipeline;
pub mod testkit;
pub mod updater;
pub mod validation;
