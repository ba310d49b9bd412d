//! Knowledge graph embedding training with a query-sampling contrastive
//! objective and bounded, hardness-aware activations on the triple distance.
//!
//! The crate is organised along the training pipeline:
//!
//! - [`kgdata`]: TSV ingestion, vocabularies, reciprocal relations, filter index, binary cache.
//! - [`scoring`]: parameter tables, transform functions, activations and triple scores.
//! - [`losses`]: query sampling loss and the four baseline strategies.
//! - [`trainer`]: analytic gradients, optimizers, the time-budgeted loop and checkpoints.
//! - [`eval`]: filtered ranking with MRR / Hits@N.
//! - [`cli`]: the `hale` command-line front-end.

pub mod cli;
pub mod error;
pub mod eval;
pub mod kgdata;
pub mod losses;
pub mod scoring;
pub mod trainer;

pub use error::{Error, Result};
