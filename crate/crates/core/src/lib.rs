//! Natural-language command interpreter for a mock trading desk.
//!
//! The pipeline: [`grammar`] synthesizes a labeled corpus, [`encoding`] turns
//! it into padded batches, [`models`] trains character-level LSTM taggers and
//! intent classifiers on top of [`numcore`], [`interpreter`] turns predicted
//! tags into commands, and [`service`] applies them to a mock trading session.

#[cfg(feature = "cli")]
pub mod cli;
pub mod encoding;
pub mod evalharness;
pub mod grammar;
pub mod interpreter;
pub mod models;
pub mod numcore;
pub mod persistence;
pub mod rng;
pub mod service;
