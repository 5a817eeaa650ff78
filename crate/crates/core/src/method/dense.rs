// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{use_layers, DetectionMethod, FitInputs, FittedDetector};
use crate::activation_io::SampleView;
use crate::detector::{dense_classify, dense_fit, DenseProfile, Prediction};
use crate::error::{Result, StageExt};

/// Cosine similarity of pooled hidden states to clean/adversarial means.
#[derive(Debug, Clone, Copy)]
pub struct DenseMethod {
    ensemble: bool,
}

impl DenseMethod {
    pub fn single() -> Self {
        DenseMethod { ensemble: false }
    }

    pub fn ensemble() -> Self {
        DenseMethod { ensemble: true }
    }
}

impl DetectionMethod for DenseMethod {
    fn name(&self) -> &'static str {
        if self.ensemble {
            "dense_ensemble"
        } else {
            "dense"
        }
    }

    fn summary(&self) -> &'static str {
        "cosine margin of token-mean hidden states to clean and adversarial references"
    }

    fn fit(&self, inputs: &FitInputs<'_>) -> Result<Box<dyn FittedDetector>> {
        let layers = use_layers(inputs, self.ensemble)?
            .iter()
            .map(|l| dense_fit(l.train_clean, l.train_adversarial))
            .collect::<Result<Vec<_>>>()
            .stage("dense-fit")?;
        Ok(Box::new(DenseProfile { layers }))
    }
}

impl FittedDetector for DenseProfile {
    fn layer_ids(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.layer_id.clone()).collect()
    }

    fn threshold(&self) -> f64 {
        0.0
    }

    fn predict(&self, views: &[SampleView<'_>]) -> Result<Prediction> {
        dense_classify(self, views)
    }
}
