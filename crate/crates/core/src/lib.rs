//! Core algorithms for detecting intermittent CI job failures from job logs.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! network, the filesystem or threads lives in the `flakeshot` companion crate.
//!
//! Pipeline overview:
//!
//! - [`labeler`] groups job runs by `(name, commit)` and derives automated
//!   labels from non-deterministic reruns.
//! - [`logprep`] abstracts variable log content into placeholder tokens.
//! - [`fewshot`] fine-tunes an embedding provider on contrastive pairs and
//!   trains a logistic-regression head on top.
//! - [`baseline`] is the TF-IDF + boosted-trees comparator.
//! - [`harness`] runs Monte Carlo cross-validation, shot sweeps and
//!   cross-project evaluation.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod fewshot;
pub mod harness;
pub mod job;
pub mod labeler;
pub mod logprep;
pub mod seed;
pub mod stats;
pub mod synth;

pub use job::{JobRecord, JobStatus, Label};
pub use labeler::LabeledSample;
pub use logprep::{preprocess, PrepConfig, ProcessedLog};
