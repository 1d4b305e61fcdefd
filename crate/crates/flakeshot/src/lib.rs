//! IO, file formats and the command-line front end around `flakeshot-core`.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod ingest;
pub mod overlay;
pub mod parallel;
#[cfg(feature = "pretrained")]
pub mod pretrained;
pub mod provider;
pub mod store;
