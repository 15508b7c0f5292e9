//! Std companion to `plangen-core`: dataset files, checkpoints, the
//! command-line tool and the HTTP inference service.

pub mod checkpoint;
pub mod commands;
pub mod jsonl;
pub mod service;

pub use plangen_core as core;
