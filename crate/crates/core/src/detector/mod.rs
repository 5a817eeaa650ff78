// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation counting, clean-only threshold calibration and
//! classification, single-layer or averaged over several layers.
//!
//! `N(x)` is the token-averaged number of selected latents that fire. The
//! threshold is the nearest-rank `(1 − α)`-quantile of `N` over clean
//! development samples, and an input is adversarial iff `N(x) > τ`.

mod dense;
mod output;
mod profile;

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_io::{ActivationSet, Label, SampleView};
use crate::error::{Error, Result};
use crate::ranker::FeatureRanking;
use crate::sae::SaeModel;

pub use dense::{dense_classify, dense_fit, dense_margin, reconstruction_anomaly, DenseLayer, DenseProfile};
pub use output::{Histogram, PredictionsFile, DEFAULT_BINS};
pub use profile::{load_detector, DetectorProfile, LayerEntry, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clean,
    Adversarial,
}

impl Verdict {
    /// Strict inequality: a score equal to the threshold is clean.
    pub fn from_score(score: f64, tau: f64) -> Self {
        if score > tau {
            Verdict::Adversarial
        } else {
            Verdict::Clean
        }
    }

    pub fn is_adversarial(self) -> bool {
        self == Verdict::Adversarial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub score: f64,
    pub verdict: Verdict,
}

/// Token-averaged count of selected latents that fire on `sample`.
pub fn activation_count(model: &SaeModel, ranking: &FeatureRanking, sample: SampleView<'_>) -> Result<f64> {
    check_pair(model, ranking)?;
    count_with_mask(model, &ranking.mask(), sample)
}

fn check_pair(model: &SaeModel, ranking: &FeatureRanking) -> Result<()> {
    if ranking.d_sae != model.d_sae() {
        return Err(Error::Dimension(format!(
            "ranking `{}` has d_sae {} but the SAE has {}",
            ranking.layer_id,
            ranking.d_sae,
            model.d_sae()
        )));
    }
    Ok(())
}

fn count_with_mask(model: &SaeModel, mask: &[bool], sample: SampleView<'_>) -> Result<f64> {
    if sample.dim() != model.d_model() {
        return Err(Error::Dimension(format!(
            "sample `{}` has dim {} but the SAE expects {}",
            sample.id,
            sample.dim(),
            model.d_model()
        )));
    }
    let mut hits = 0usize;
    for t in sample.tokens() {
        hits += model.encode(t)?.indices.iter().filter(|&&i| mask[i]).count();
    }
    Ok(hits as f64 / sample.num_tokens() as f64)
}

/// 1-based nearest rank `⌈(1 − α)·n⌉`, clamped to `[1, n]`.
///
/// Products within a relative 1e-9 of an integer snap to it so that e.g.
/// `0.98 · 100` selects rank 98 regardless of binary rounding.
pub fn nearest_rank(n: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * n as f64;
    let snapped = if (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0) {
        x.round()
    } else {
        x.ceil()
    };
    (snapped as usize).clamp(1, n)
}

/// Nearest-rank `(1 − α)`-quantile of clean development scores.
pub fn calibrate_threshold(counts: &[f64], alpha: f64) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("cannot calibrate on an empty set".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must be in [0, 1), got {alpha}")));
    }
    if counts.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("calibration scores".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(sorted.len(), alpha) - 1])
}

/// Uniform average of per-layer counts.
pub fn ensemble_count(per_layer: &[f64], num_layers: usize) -> Result<f64> {
    if per_layer.is_empty() || per_layer.len() != num_layers {
        return Err(Error::Dimension(format!(
            "expected {num_layers} per-layer counts, got {}",
            per_layer.len()
        )));
    }
    Ok(uniform_mean(per_layer))
}

/// Mean that is exact for equal inputs and independent of input order:
/// values are sorted and averaged as offsets from the smallest.
pub(crate) fn uniform_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let base = v[0];
    base + v.iter().map(|x| x - base).sum::<f64>() / v.len() as f64
}

/// An SAE and its selected features at one capture location.
#[derive(Debug, Clone)]
pub struct LayerDetector {
    pub layer_id: String,
    pub model: Arc<SaeModel>,
    pub ranking: FeatureRanking,
    mask: Vec<bool>,
}

impl LayerDetector {
    pub fn new(layer_id: impl Into<String>, model: Arc<SaeModel>, ranking: FeatureRanking) -> Result<Self> {
        let layer_id = layer_id.into();
        check_pair(&model, &ranking)?;
        if ranking.layer_id != layer_id {
            return Err(Error::InvalidInput(format!(
                "ranking was computed for layer `{}`, not `{layer_id}`",
                ranking.layer_id
            )));
        }
        let mask = ranking.mask();
        Ok(LayerDetector {
            layer_id,
            model,
            ranking,
            mask,
        })
    }

    pub fn count(&self, sample: SampleView<'_>) -> Result<f64> {
        count_with_mask(&self.model, &self.mask, sample)
    }
}

/// Clean development data, one aligned set per layer.
///
/// Construction refuses any sample labelled adversarial, so threshold
/// calibration cannot see attack data.
#[derive(Debug, Clone, Copy)]
pub struct CleanDevSet<'a> {
    layers: &'a [ActivationSet],
}

impl<'a> CleanDevSet<'a> {
    pub fn new(layers: &'a [ActivationSet]) -> Result<Self> {
        if layers.is_empty() || layers[0].is_empty() {
            return Err(Error::InvalidInput("empty calibration set".into()));
        }
        for set in layers {
            if let Some(s) = set.samples().iter().find(|s| s.label == Label::Adversarial) {
                return Err(Error::InvalidInput(format!(
                    "calibration set `{}` contains adversarial sample `{}`",
                    set.layer_id, s.id
                )));
            }
        }
        align(layers)?;
        Ok(CleanDevSet { layers })
    }

    pub fn len(&self) -> usize {
        self.layers[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers[0].is_empty()
    }

    pub fn layer(&self, layer_id: &str) -> Option<&'a ActivationSet> {
        self.layers.iter().find(|s| s.layer_id == layer_id)
    }
}

/// Per-sample views across layers, ordered like the first set.
pub fn align(sets: &[ActivationSet]) -> Result<Vec<Vec<SampleView<'_>>>> {
    let refs: Vec<&ActivationSet> = sets.iter().collect();
    align_refs(&refs)
}

pub fn align_refs<'a>(sets: &[&'a ActivationSet]) -> Result<Vec<Vec<SampleView<'a>>>> {
    let Some(first) = sets.first() else {
        return Err(Error::InvalidInput("no layers given".into()));
    };
    if let Some(set) = sets.iter().find(|s| s.len() != first.len()) {
        return Err(Error::InvalidInput(format!(
            "layer `{}` has {} samples but `{}` has {}",
            set.layer_id,
            set.len(),
            first.layer_id,
            first.len()
        )));
    }
    let index: Vec<HashMap<&str, usize>> = sets
        .iter()
        .map(|s| s.samples().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect())
        .collect();
    first
        .samples()
        .iter()
        .map(|s| {
            sets.iter()
                .zip(&index)
                .map(|(set, idx)| {
                    let i = idx.get(s.id.as_str()).ok_or_else(|| {
                        Error::InvalidInput(format!("sample `{}` missing from layer `{}`", s.id, set.layer_id))
                    })?;
                    Ok(set.samples()[*i].view())
                })
                .collect()
        })
        .collect()
}

/// A calibrated SAE-feature detector over one or more layers.
#[derive(Debug, Clone)]
pub struct SaegisDetector {
    pub layers: Vec<LayerDetector>,
    pub alpha: f64,
    pub tau: f64,
    pub calibration_size: usize,
}

impl SaegisDetector {
    pub fn mode(&self) -> Mode {
        if self.layers.len() == 1 {
            Mode::Single
        } else {
            Mode::Ensemble
        }
    }

    /// Per-layer counts of one sample; `views` follow `self.layers` order.
    pub fn layer_counts(&self, views: &[SampleView<'_>]) -> Result<Vec<f64>> {
        if views.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "detector has {} layers but {} views were given",
                self.layers.len(),
                views.len()
            )));
        }
        self.layers.iter().zip(views).map(|(l, v)| l.count(*v)).collect()
    }

    /// `N̄(x)`: per-layer counts averaged uniformly.
    pub fn score(&self, views: &[SampleView<'_>]) -> Result<f64> {
        ensemble_count(&self.layer_counts(views)?, self.layers.len())
    }

    pub fn classify(&self, views: &[SampleView<'_>]) -> Result<Prediction> {
        let score = self.score(views)?;
        Ok(Prediction {
            id: views[0].id.to_string(),
            score,
            verdict: Verdict::from_score(score, self.tau),
        })
    }

    /// Classify aligned per-layer sets (matched by layer id).
    pub fn classify_sets(&self, sets: &[ActivationSet]) -> Result<Vec<Prediction>> {
        let ordered = self
            .layers
            .iter()
            .map(|l| {
                sets.iter()
                    .find(|s| s.layer_id == l.layer_id)
                    .ok_or_else(|| Error::InvalidInput(format!("no activations for layer `{}`", l.layer_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = align_refs(&ordered)?;
        rows.par_iter().map(|views| self.classify(views)).collect()
    }
}

/// Calibrate `τ̄` over several layers using clean development data only.
pub fn calibrate_ensemble(layers: Vec<LayerDetector>, dev: CleanDevSet<'_>, alpha: f64) -> Result<SaegisDetector> {
    if layers.is_empty() {
        return Err(Error::InvalidInput("at least one layer is required".into()));
    }
    let mut ordered = Vec::with_capacity(layers.len());
    for l in &layers {
        let set = dev
            .layer(&l.layer_id)
            .ok_or_else(|| Error::InvalidInput(format!("no calibration data for layer `{}`", l.layer_id)))?;
        if set.dim() != l.model.d_model() {
            return Err(Error::Dimension(format!(
                "calibration data for `{}` has dim {} but its SAE expects {}",
                l.layer_id,
                set.dim(),
                l.model.d_model()
            )));
        }
        ordered.push(set);
    }
    let rows = align_refs(&ordered)?;
    let mut detector = SaegisDetector {
        layers,
        alpha,
        tau: f64::NAN,
        calibration_size: rows.len(),
    };
    let scores: Vec<f64> = rows.par_iter().map(|v| detector.score(v)).collect::<Result<_>>()?;
    detector.tau = calibrate_threshold(&scores, alpha)?;
    Ok(detector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_io::SampleRecord;

    /// Identity SAE over `d` dims: latent i fires iff x_i > 0.
    fn identity(d: usize, k: usize) -> Arc<SaeModel> {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        Arc::new(SaeModel::from_parts(d, d, k, eye.clone(), vec![0.0; d], eye, vec![0.0; d]).unwrap())
    }

    fn ranking(sel: &[usize], d: usize) -> FeatureRanking {
        FeatureRanking {
            layer_id: "l".into(),
            d_sae: d,
            attack_scores: None,
            selected: sel.to_vec(),
            selected_scores: vec![1.0; sel.len()],
            clean_count: 1,
            adversarial_count: 1,
        }
    }

    fn sample(id: &str, rows: &[&[f32]]) -> SampleRecord {
        let d = rows[0].len();
        SampleRecord::new(id, Label::Clean, d, rows.concat()).unwrap()
    }

    #[test]
    fn count_direct_substitution() {
        let m = identity(4, 4);
        let r = ranking(&[0, 1, 2], 4);
        let s = sample("x", &[&[1.0, 1.0, 0.0, 1.0], &[0.0, 0.0, 2.0, 0.0]]);
        assert_eq!(activation_count(&m, &r, s.view()).unwrap(), 1.5);
    }

    #[test]
    fn count_bounds() {
        let m = identity(3, 3);
        let r = ranking(&[0, 1, 2], 3);
        let none = sample("a", &[&[0.0, -1.0, 0.0]]);
        let all = sample("b", &[&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]]);
        assert_eq!(activation_count(&m, &r, none.view()).unwrap(), 0.0);
        assert_eq!(activation_count(&m, &r, all.view()).unwrap(), 3.0);
    }

    #[test]
    fn count_dimension_mismatch() {
        let m = identity(3, 3);
        let s = sample("a", &[&[1.0, 1.0]]);
        assert!(activation_count(&m, &ranking(&[0], 3), s.view()).is_err());
        assert!(activation_count(&m, &ranking(&[0], 4), sample("b", &[&[1.0, 1.0, 1.0]]).view()).is_err());
    }

    #[test]
    fn threshold_hundred_values() {
        let counts: Vec<f64> = (0..100).map(f64::from).collect();
        let tau = calibrate_threshold(&counts, 0.02).unwrap();
        assert_eq!(tau, 97.0);
        let fp = counts.iter().filter(|&&c| c > tau).count();
        assert_eq!(fp, 2);
    }

    #[test]
    fn threshold_constant_and_alpha_zero() {
        assert_eq!(calibrate_threshold(&[2.5; 10], 0.1).unwrap(), 2.5);
        assert_eq!(calibrate_threshold(&[3.0, 9.0, 1.0], 0.0).unwrap(), 9.0);
        assert_eq!(calibrate_threshold(&[3.0, 9.0, 1.0], 0.999).unwrap(), 1.0);
        assert!(calibrate_threshold(&[], 0.1).is_err());
        assert!(calibrate_threshold(&[1.0], 1.0).is_err());
    }

    #[test]
    fn verdict_boundary_is_clean() {
        assert_eq!(Verdict::from_score(2.0, 2.0), Verdict::Clean);
        assert_eq!(Verdict::from_score(2.0 + 1e-12, 2.0), Verdict::Adversarial);
        assert_eq!(Verdict::from_score(0.0, 0.0), Verdict::Clean);
    }

    #[test]
    fn ensemble_mean() {
        assert_eq!(ensemble_count(&[2.0, 4.0], 2).unwrap(), 3.0);
        assert_eq!(ensemble_count(&[5.0], 1).unwrap(), 5.0);
        assert_eq!(ensemble_count(&[0.0, 0.0, 0.0], 3).unwrap(), 0.0);
        assert!(ensemble_count(&[1.0], 2).is_err());
    }

    #[test]
    fn dev_set_refuses_adversarial() {
        let s = SampleRecord::new("a", Label::Adversarial, 2, vec![1.0, 1.0]).unwrap();
        let sets = vec![ActivationSet::new("l", 2, vec![s]).unwrap()];
        assert!(CleanDevSet::new(&sets).is_err());
    }

    fn dev_layer(layer: &str, rows: &[[f32; 3]]) -> ActivationSet {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, r)| SampleRecord::new(format!("s{i}"), Label::Clean, 3, r.to_vec()).unwrap())
            .collect();
        ActivationSet::new(layer, 3, samples).unwrap()
    }

    #[test]
    fn ensemble_with_dead_layer_halves_tau() {
        let rows_a = [[1.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let rows_b = [[0.0; 3]; 4];
        let sets = vec![dev_layer("a", &rows_a), dev_layer("b", &rows_b)];
        let dev = CleanDevSet::new(&sets).unwrap();
        let mk = |id: &str| {
            let mut r = ranking(&[0, 1, 2], 3);
            r.layer_id = id.into();
            LayerDetector::new(id, identity(3, 3), r).unwrap()
        };
        let single = calibrate_ensemble(vec![mk("a")], dev, 0.0).unwrap();
        let both = calibrate_ensemble(vec![mk("a"), mk("b")], dev, 0.0).unwrap();
        assert_eq!(single.tau, 3.0);
        assert_eq!(both.tau, single.tau / 2.0);
        assert_eq!(both.mode(), Mode::Ensemble);

        let swapped = calibrate_ensemble(vec![mk("b"), mk("a")], dev, 0.0).unwrap();
        assert_eq!(swapped.tau, both.tau);
    }

    #[test]
    fn layer_id_mismatch_rejected() {
        let mut r = ranking(&[0], 3);
        r.layer_id = "other".into();
        assert!(LayerDetector::new("l", identity(3, 3), r).is_err());
    }
}
