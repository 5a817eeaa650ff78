// SPDX-License-Identifier: MIT OR Apache-2.0

//! Confusion-matrix metrics with adversarial as the positive class.
//!
//! Percentages are kept exact; the `*_1dp` fields truncate to one decimal
//! place, the convention of published detection tables.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::activation_io::Label;
use crate::detector::{Prediction, Verdict};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Percent; `None` when nothing was flagged.
    pub fn precision(&self) -> Option<f64> {
        let flagged = self.tp + self.fp;
        (flagged > 0).then(|| 100.0 * self.tp as f64 / flagged as f64)
    }

    /// Percent; `None` when the test set has no adversarial samples.
    pub fn recall(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| 100.0 * self.tp as f64 / pos as f64)
    }

    /// Harmonic mean of precision and recall. When precision is undefined
    /// but positives exist, F1 is 0 (no true positives).
    pub fn f1(&self) -> Option<f64> {
        match (self.precision(), self.recall()) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (_, Some(_)) => Some(0.0),
            _ => None,
        }
    }

    /// False-positive rate over clean samples, as a fraction.
    pub fn false_positive_rate(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.fp as f64 / neg as f64)
    }
}

/// Truncate a percentage to one decimal place.
pub fn truncate_1dp(x: f64) -> f64 {
    ((x * 10.0) + 1e-9).floor() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub label: Label,
    pub score: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub confusion: Confusion,
    pub precision: Option<f64>,
    /// False when no sample was flagged, so precision is undefined.
    pub precision_defined: bool,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub precision_1dp: Option<f64>,
    pub recall_1dp: Option<f64>,
    pub f1_1dp: Option<f64>,
    pub threshold: f64,
    pub scores: Vec<ScoredSample>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, threshold: f64, scores: Vec<ScoredSample>) -> Self {
        let precision = confusion.precision();
        let recall = confusion.recall();
        let f1 = confusion.f1();
        EvalReport {
            confusion,
            precision,
            precision_defined: precision.is_some(),
            recall,
            f1,
            precision_1dp: precision.map(truncate_1dp),
            recall_1dp: recall.map(truncate_1dp),
            f1_1dp: f1.map(truncate_1dp),
            threshold,
            scores,
        }
    }

    /// F1 as a fraction in [0, 1]; 0 when undefined.
    pub fn f1_fraction(&self) -> f64 {
        self.f1.unwrap_or(0.0) / 100.0
    }
}

/// Score predictions against ground truth. Ids must match one-to-one and
/// every label must be clean or adversarial.
pub fn compute_metrics(predictions: &[Prediction], labels: &[(String, Label)], threshold: f64) -> Result<EvalReport> {
    let mut truth: HashMap<&str, Label> = HashMap::with_capacity(labels.len());
    for (id, label) in labels {
        if *label == Label::Unknown {
            return Err(Error::InvalidInput(format!("sample `{id}` has no ground-truth label")));
        }
        if truth.insert(id.as_str(), *label).is_some() {
            return Err(Error::InvalidInput(format!("duplicate label for `{id}`")));
        }
    }
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut c = Confusion::default();
    let mut scores = Vec::with_capacity(predictions.len());
    for p in predictions {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate prediction for `{}`", p.id)));
        }
        let label = *truth
            .get(p.id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("prediction for unknown id `{}`", p.id)))?;
        match (label, p.verdict) {
            (Label::Adversarial, Verdict::Adversarial) => c.tp += 1,
            (Label::Adversarial, Verdict::Clean) => c.fn_ += 1,
            (_, Verdict::Adversarial) => c.fp += 1,
            (_, Verdict::Clean) => c.tn += 1,
        }
        scores.push(ScoredSample {
            id: p.id.clone(),
            label,
            score: p.score,
            verdict: p.verdict,
        });
    }
    if seen.len() != truth.len() {
        let missing = labels.iter().find(|(id, _)| !seen.contains(id.as_str())).map(|(id, _)| id.as_str());
        return Err(Error::InvalidInput(format!(
            "no prediction for `{}`",
            missing.unwrap_or("?")
        )));
    }
    Ok(EvalReport::from_confusion(c, threshold, scores))
}

/// Area under the ROC curve with adversarial as positive; ties count half.
pub fn auroc(clean: &[f64], adversarial: &[f64]) -> Option<f64> {
    if clean.is_empty() || adversarial.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &a in adversarial {
        for &c in clean {
            if a > c {
                wins += 1.0;
            } else if a == c {
                wins += 0.5;
            }
        }
    }
    Some(wins / (clean.len() * adversarial.len()) as f64)
}
