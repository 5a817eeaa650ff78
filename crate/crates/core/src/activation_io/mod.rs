// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation dumps: per-sample token × hidden-width matrices for one
//! capture location, plus a synthetic generator for desk-scale runs.
//!
//! Only image-token rows are ever stored here. Masking out text positions
//! is the extractor's job.

mod format;
mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{read_activation_set, read_manifest, write_activation_set, Manifest, ManifestSample};
pub use synthetic::{
    generate_synthetic, generate_synthetic_layers, ProtocolSplit, SyntheticConfig, SyntheticLayer,
};

/// Ground-truth label attached to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Adversarial,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Adversarial => "adversarial",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Label::Clean),
            "adversarial" => Ok(Label::Adversarial),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::Format(format!("unknown label `{other}`"))),
        }
    }
}

/// One input's image-token activations, stored row-major (token-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub label: Label,
    dim: usize,
    data: Vec<f32>,
}

impl SampleRecord {
    /// Build a record from a flat row-major buffer of `num_tokens * dim` floats.
    pub fn new(id: impl Into<String>, label: Label, dim: usize, data: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if dim == 0 {
            return Err(Error::InvalidInput(format!("sample `{id}`: dim must be positive")));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "sample `{id}`: {} values is not a positive multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sample `{id}`: token {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(SampleRecord { id, label, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn token(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Flat row-major view of the whole matrix.
    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Drop the label, leaving only what a detector may look at.
    pub fn view(&self) -> SampleView<'_> {
        SampleView {
            id: &self.id,
            dim: self.dim,
            data: &self.data,
        }
    }
}

/// Label-free borrowed view of a sample.
///
/// Everything that classifies inputs consumes these, so test labels cannot
/// leak into scoring.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    pub id: &'a str,
    dim: usize,
    data: &'a [f32],
}

impl<'a> SampleView<'a> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn tokens(&self) -> impl ExactSizeIterator<Item = &'a [f32]> + 'a {
        self.data.chunks_exact(self.dim)
    }
}

/// All samples captured at one layer location.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub layer_id: String,
    dim: usize,
    samples: Vec<SampleRecord>,
}

impl ActivationSet {
    pub fn new(layer_id: impl Into<String>, dim: usize, samples: Vec<SampleRecord>) -> Result<Self> {
        let set = ActivationSet {
            layer_id: layer_id.into(),
            dim,
            samples,
        };
        set.validate()?;
        Ok(set)
    }

    /// Check the set-level invariants: positive width, matching sample
    /// widths and unique ids. An empty set is allowed in memory.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("dim must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.dim != self.dim {
                return Err(Error::Dimension(format!(
                    "sample `{}` has dim {} but set has dim {}",
                    s.id, s.dim, self.dim
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.samples.iter().map(SampleRecord::num_tokens).sum()
    }

    /// Iterate every token row of every sample, in sample order.
    pub fn token_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.samples.iter().flat_map(SampleRecord::tokens)
    }

    /// Keep samples in the half-open index range, preserving order.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ActivationSet {
        ActivationSet {
            layer_id: self.layer_id.clone(),
            dim: self.dim,
            samples: self.samples[range].to_vec(),
        }
    }

    /// Concatenate two sets captured at the same location.
    pub fn concat(&self, other: &ActivationSet) -> Result<ActivationSet> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "cannot concatenate dim {} with dim {}",
                self.dim, other.dim
            )));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        ActivationSet::new(self.layer_id.clone(), self.dim, samples)
    }

    /// Merge sets from possibly different sources into one training pool.
    /// Ids are prefixed with the source index to keep them unique.
    pub fn pooled(layer_id: impl Into<String>, sets: &[&ActivationSet]) -> Result<ActivationSet> {
        let Some(first) = sets.first() else {
            return Err(Error::InvalidInput("nothing to pool".into()));
        };
        let mut samples = Vec::with_capacity(sets.iter().map(|s| s.len()).sum());
        for (n, set) in sets.iter().enumerate() {
            if set.dim != first.dim {
                return Err(Error::Dimension(format!(
                    "cannot pool dim {} with dim {}",
                    first.dim, set.dim
                )));
            }
            samples.extend(set.samples.iter().map(|s| SampleRecord {
                id: format!("{n}/{}", s.id),
                ..s.clone()
            }));
        }
        ActivationSet::new(layer_id, first.dim, samples)
    }

    /// Samples carrying the given label.
    pub fn filter_label(&self, label: Label) -> ActivationSet {
        ActivationSet {
            layer_id: self.layer_id.clone(),
            dim: self.dim,
            samples: self.samples.iter().filter(|s| s.label == label).cloned().collect(),
        }
    }

    /// Same samples with every label overwritten.
    pub fn relabel(&self, label: Label) -> ActivationSet {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.label = label;
        }
        out
    }

    pub fn into_samples(self) -> Vec<SampleRecord> {
        self.samples
    }
}
