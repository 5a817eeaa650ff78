// SPDX-License-Identifier: MIT OR Apache-2.0

//! `predictions.json` and score histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::activation_io::Label;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 20;

/// Equal-width histogram of scores, one count vector per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: BTreeMap<Label, Vec<usize>>,
}

impl Histogram {
    /// Bins span `[floor(min), ceil(max)]`; the last bin is closed.
    pub fn build(scores: &[(f64, Label)], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidInput("histogram needs at least one bin".into()));
        }
        if scores.iter().any(|(s, _)| !s.is_finite()) {
            return Err(Error::NonFinite("histogram scores".into()));
        }
        let lo = scores.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = scores.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let (lo, mut hi) = if scores.is_empty() { (0.0, 1.0) } else { (lo.floor(), hi.ceil()) };
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for &(s, label) in scores {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts.entry(label).or_insert_with(|| vec![0; bins])[b] += 1;
        }
        Ok(Histogram { edges, counts })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub tau: f64,
    pub predictions: Vec<Prediction>,
    pub histogram: Histogram,
}
