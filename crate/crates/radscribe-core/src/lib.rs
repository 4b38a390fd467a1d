//! Core algorithms for grounded chest X-ray report generation.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: label vocabularies and consensus logic, image windowing and
//! resizing math, the structured-report grammar, a small trainable
//! vision-language model with its tokenizer and optimizer, and the evaluation
//! metrics. File formats, dataset IO, and the CLI live in the companion
//! `radscribe` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod eval;
pub mod image;
pub mod labelspace;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;
pub mod tokenizer;
pub mod train;

/// Version tag of the structured-report wire grammar. Checkpoints and dataset
/// manifests record this; mismatches are rejected at load time.
pub const GRAMMAR_VERSION: &str = "report-grammar/1";
