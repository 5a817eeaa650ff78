// SPDX-License-Identifier: MIT OR Apache-2.0

//! Baselines that bypass the sparse features: cosine similarity of pooled
//! hidden states to clean/adversarial reference means, and raw SAE
//! reconstruction error.

use serde::{Deserialize, Serialize};

use super::{Prediction, Verdict};
use crate::activation_io::{ActivationSet, SampleView};
use crate::error::{Error, Result};
use crate::sae::SaeModel;

/// Reference embeddings for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub layer_id: String,
    pub mu_clean: Vec<f64>,
    pub mu_adversarial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseProfile {
    pub layers: Vec<DenseLayer>,
}

fn token_mean(view: SampleView<'_>) -> Vec<f64> {
    let mut acc = vec![0.0; view.dim()];
    for t in view.tokens() {
        for (a, &v) in acc.iter_mut().zip(t) {
            *a += v as f64;
        }
    }
    let n = view.num_tokens() as f64;
    acc.into_iter().map(|a| a / n).collect()
}

fn set_mean(set: &ActivationSet) -> Vec<f64> {
    let mut acc = vec![0.0; set.dim()];
    for s in set.samples() {
        for (a, v) in acc.iter_mut().zip(token_mean(s.view())) {
            *a += v;
        }
    }
    let n = set.len() as f64;
    acc.into_iter().map(|a| a / n).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
}

/// Mean over samples of each sample's token-mean hidden state.
pub fn dense_fit(clean: &ActivationSet, adversarial: &ActivationSet) -> Result<DenseLayer> {
    if clean.is_empty() || adversarial.is_empty() {
        return Err(Error::InvalidInput("dense baseline needs nonempty clean and adversarial sets".into()));
    }
    if clean.dim() != adversarial.dim() {
        return Err(Error::Dimension("clean and adversarial sets differ in dim".into()));
    }
    let layer = DenseLayer {
        layer_id: clean.layer_id.clone(),
        mu_clean: set_mean(clean),
        mu_adversarial: set_mean(adversarial),
    };
    if norm(&layer.mu_clean) == 0.0 || norm(&layer.mu_adversarial) == 0.0 {
        return Err(Error::InvalidInput("reference embedding has zero norm".into()));
    }
    Ok(layer)
}

/// `cos(e, μ_adv) − cos(e, μ_clean)` for the sample's pooled embedding `e`.
pub fn dense_margin(layer: &DenseLayer, view: SampleView<'_>) -> Result<f64> {
    if view.dim() != layer.mu_clean.len() {
        return Err(Error::Dimension(format!(
            "sample `{}` has dim {} but layer `{}` has {}",
            view.id,
            view.dim(),
            layer.layer_id,
            layer.mu_clean.len()
        )));
    }
    let e = token_mean(view);
    if norm(&e) == 0.0 {
        return Err(Error::InvalidInput(format!("sample `{}` has a zero-norm embedding", view.id)));
    }
    Ok(cosine(&e, &layer.mu_adversarial) - cosine(&e, &layer.mu_clean))
}

/// Average the per-layer margins; positive means adversarial, a tie is clean.
pub fn dense_classify(profile: &DenseProfile, views: &[SampleView<'_>]) -> Result<Prediction> {
    if views.len() != profile.layers.len() || views.is_empty() {
        return Err(Error::Dimension(format!(
            "profile has {} layers but {} views were given",
            profile.layers.len(),
            views.len()
        )));
    }
    let margins = profile
        .layers
        .iter()
        .zip(views)
        .map(|(l, v)| dense_margin(l, *v))
        .collect::<Result<Vec<_>>>()?;
    let score = super::uniform_mean(&margins);
    Ok(Prediction {
        id: views[0].id.to_string(),
        score,
        verdict: Verdict::from_score(score, 0.0),
    })
}

/// Token-mean SAE reconstruction MSE of one sample.
pub fn reconstruction_anomaly(model: &SaeModel, view: SampleView<'_>) -> Result<f64> {
    let rows: Vec<&[f32]> = view.tokens().collect();
    model.reconstruction_loss(&rows)
}
