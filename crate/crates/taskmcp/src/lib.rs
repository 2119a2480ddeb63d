//! File formats, artifact loading, the command line and the HTTP service
//! around `taskmcp-core`.

pub mod artifacts;
pub mod cli;
pub mod data;
pub mod engine;
pub mod external;

pub use engine::{Engine, EnginePaths, RerankChoice};
pub mod service;
