// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{use_layers, DetectionMethod, FitInputs, FittedDetector};
use crate::activation_io::SampleView;
use crate::detector::{calibrate_ensemble, LayerDetector, Prediction, SaegisDetector};
use crate::error::{Error, Result, StageExt};
use crate::ranker::FeatureRanking;

/// Rank SAE latents per layer, count selected activations, threshold on clean data.
#[derive(Debug, Clone, Copy)]
pub struct SaegisMethod {
    ensemble: bool,
}

impl SaegisMethod {
    pub fn single() -> Self {
        SaegisMethod { ensemble: false }
    }

    pub fn ensemble() -> Self {
        SaegisMethod { ensemble: true }
    }

    /// Rank and build per-layer detectors without calibrating.
    pub fn layer_detectors(&self, inputs: &FitInputs<'_>) -> Result<Vec<LayerDetector>> {
        use_layers(inputs, self.ensemble)?
            .iter()
            .map(|l| {
                let model = l.model.clone().ok_or_else(|| {
                    Error::InvalidInput(format!("layer `{}` has no SAE model", l.layer_id))
                })?;
                let scores = crate::ranker::attack_relevance(l.train_clean, l.train_adversarial, &model)
                    .stage("rank")?;
                let ranking = FeatureRanking::from_scores(
                    l.layer_id.clone(),
                    scores,
                    inputs.top_k,
                    l.train_clean.len(),
                    l.train_adversarial.len(),
                )
                .stage("select")?;
                LayerDetector::new(l.layer_id.clone(), model, ranking)
            })
            .collect()
    }
}

impl DetectionMethod for SaegisMethod {
    fn name(&self) -> &'static str {
        if self.ensemble {
            "saegis_ensemble"
        } else {
            "saegis"
        }
    }

    fn summary(&self) -> &'static str {
        if self.ensemble {
            "mean SAE feature count over all layers, clean-quantile threshold"
        } else {
            "SAE feature count at the first layer, clean-quantile threshold"
        }
    }

    fn fit(&self, inputs: &FitInputs<'_>) -> Result<Box<dyn FittedDetector>> {
        let layers = self.layer_detectors(inputs)?;
        let detector = calibrate_ensemble(layers, inputs.dev, inputs.alpha).stage("calibrate")?;
        Ok(Box::new(detector))
    }
}

impl FittedDetector for SaegisDetector {
    fn layer_ids(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.layer_id.clone()).collect()
    }

    fn threshold(&self) -> f64 {
        self.tau
    }

    fn predict(&self, views: &[SampleView<'_>]) -> Result<Prediction> {
        self.classify(views)
    }
}
