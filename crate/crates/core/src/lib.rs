// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adversarial-input detection from sparse autoencoder features.
//!
//! Pipeline: activation dumps → top-k SAE per layer → attack-relevant
//! feature ranking → clean-quantile threshold on the count of selected
//! features that fire → optional uniform ensemble over layers.

pub mod activation_io;
pub mod cli;
pub mod detector;
pub mod error;
pub mod eval;
pub mod method;
pub mod ranker;
pub mod sae;

mod json;

pub use activation_io::{ActivationSet, Label, SampleRecord, SampleView};
pub use error::{Error, Result};
pub use json::{read_json, write_json};
pub use ranker::FeatureRanking;
pub use sae::{Sae, SaeModel, SparseCode};
