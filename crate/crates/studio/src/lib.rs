//! File formats, persistence, the HTTP service and the command line for the
//! recipe studio. The algorithms themselves live in `recipe-core`.

pub mod artifacts;
pub mod cli;
pub mod engine;
pub mod harness;
pub mod service;
pub mod store;
