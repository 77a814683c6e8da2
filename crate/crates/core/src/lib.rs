//! Multilingual extractive-QA data synthesis.
//!
//! The crate covers the whole data path: ingesting gold QA sets and unlabeled
//! passage pools ([`corpus`]), rendering the bridged few-shot prompts
//! ([`promptkit`]), talking to generation and translation services
//! ([`backends`]), tuning a soft prompt on a small frozen byte-level language
//! model ([`tuner`]), generating and cleaning synthetic data ([`synthesis`]),
//! and scoring the results ([`metrics`], [`taxonomy`]).
//!
//! Batch-shaped work (per-example gradients, per-passage generation, filtering,
//! evaluation) goes through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iteration otherwise. Both paths produce
//! bit-identical results.

pub mod backends;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod par;
pub mod promptkit;
pub mod synthesis;
pub mod taxonomy;
pub mod tuner;
mod util;

pub use error::{Error, Result};
