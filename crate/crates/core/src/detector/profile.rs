// SPDX-License-Identifier: MIT OR Apache-2.0

//! `profile.json`: everything needed to rebuild a calibrated detector.
//!
//! Paths are stored as given and resolved relative to the working
//! directory when loaded.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LayerDetector, SaegisDetector};
use crate::error::{Error, Result};
use crate::json::{read_json, write_json};
use crate::ranker::load_ranking;
use crate::sae::load_model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub layer_id: String,
    pub sae_path: String,
    pub ranking_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorProfile {
    pub mode: Mode,
    pub alpha: f64,
    pub tau: f64,
    pub calibration_size: usize,
    pub layers: Vec<LayerEntry>,
}

impl DetectorProfile {
    pub fn new(detector: &SaegisDetector, layers: Vec<LayerEntry>) -> Result<Self> {
        let profile = DetectorProfile {
            mode: detector.mode(),
            alpha: detector.alpha,
            tau: detector.tau,
            calibration_size: detector.calibration_size,
            layers,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::Format("profile tau must be finite".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Format("profile has no layers".into()));
        }
        if self.mode == Mode::Single && self.layers.len() != 1 {
            return Err(Error::Format(format!(
                "single-mode profile lists {} layers",
                self.layers.len()
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Format(format!("profile alpha {} outside [0, 1)", self.alpha)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: DetectorProfile = read_json(path.as_ref())?;
        p.validate()?;
        Ok(p)
    }
}

/// Load a profile together with the SAE weights and rankings it names.
pub fn load_detector(path: impl AsRef<Path>) -> Result<(DetectorProfile, SaegisDetector)> {
    let profile = DetectorProfile::load(path)?;
    let layers = profile
        .layers
        .iter()
        .map(|e| {
            let model = load_model(&e.sae_path)?;
            let ranking = load_ranking(&e.ranking_path)?;
            LayerDetector::new(e.layer_id.clone(), Arc::new(model), ranking)
        })
        .collect::<Result<Vec<_>>>()?;
    let detector = SaegisDetector {
        layers,
        alpha: profile.alpha,
        tau: profile.tau,
        calibration_size: profile.calibration_size,
    };
    Ok((profile, detector))
}
