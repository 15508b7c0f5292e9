//! Controllable data-to-text generation from content plans.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numeric piece of
//! the pipeline: the structured-data model and its linearization, a small
//! reverse-mode differentiation tape, the heuristic delexicalizer, the
//! linear-chain CRF content planner, the plan-conditioned encoder-decoder
//! generator with its decoding strategies, REINFORCE fine-tuning, the
//! evaluation metrics, and a synthetic plan-faithful corpus.
//!
//! File formats, checkpoints, the CLI and the HTTP service live in the
//! `plangen` companion crate.
#![no_std]

extern crate alloc;

pub mod corpus;
pub mod crf;
pub mod data;
pub mod delex;
mod error;
pub mod generator;
pub mod math;
pub mod metrics;
pub mod planner;
pub mod rl;
pub mod tensor;
pub mod tokenize;
pub mod vocab;

pub use error::{Error, Result};
