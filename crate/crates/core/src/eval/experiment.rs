// SPDX-License-Identifier: MIT OR Apache-2.0

//! One experiment: rank → calibrate → classify → score.
//!
//! In-domain, cross-domain and cross-attack settings differ only in which
//! dumps an experiment spec points at for training versus testing.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, EvalReport};
use crate::activation_io::{read_activation_set, ActivationSet, Label};
use crate::detector::{align_refs, CleanDevSet, Histogram, PredictionsFile, DEFAULT_BINS};
use crate::error::{Error, Result, StageExt};
use crate::json::{read_json, write_json};
use crate::method::{FitInputs, LayerData, MethodRegistry};
use crate::sae::{load_model, SaeModel};

/// Dump locations for one capture layer. Relative paths resolve against
/// the directory holding the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPaths {
    pub layer_id: String,
    #[serde(default)]
    pub sae: Option<PathBuf>,
    pub train_clean: PathBuf,
    pub train_adversarial: PathBuf,
    pub dev_clean: PathBuf,
    pub test_clean: PathBuf,
    pub test_adversarial: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub method: String,
    #[serde(rename = "K")]
    pub top_k: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Use only this many training adversarial samples (seeded subset).
    #[serde(default)]
    pub adversarial_sample_count: Option<usize>,
    pub layers: Vec<LayerPaths>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("experiment lists no layers".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidInput("K must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!("alpha {} outside [0, 1)", self.alpha)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: ExperimentSpec = read_json(path.as_ref())?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// Read every dump and SAE named in this experiment.
    pub fn load_data(&self, base: &Path) -> Result<ExperimentData> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let model = match &l.sae {
                    Some(p) => Some(Arc::new(load_model(resolve(p))?)),
                    None => None,
                };
                let read = |p: &Path| read_activation_set(resolve(p));
                LayerSets::new(
                    l.layer_id.clone(),
                    model,
                    read(&l.train_clean)?,
                    read(&l.train_adversarial)?,
                    read(&l.dev_clean)?,
                    read(&l.test_clean)?,
                    read(&l.test_adversarial)?,
                )
            })
            .collect::<Result<Vec<_>>>()
            .stage("load")?;
        Ok(ExperimentData { layers })
    }
}

/// In-memory data for one layer.
#[derive(Debug, Clone)]
pub struct LayerSets {
    pub layer_id: String,
    pub model: Option<Arc<SaeModel>>,
    pub train_clean: ActivationSet,
    pub train_adversarial: ActivationSet,
    pub dev_clean: ActivationSet,
    pub test_clean: ActivationSet,
    pub test_adversarial: ActivationSet,
}

impl LayerSets {
    /// Sets are renamed to `layer_id` so that dumps from different sources
    /// can be combined.
    pub fn new(
        layer_id: String,
        model: Option<Arc<SaeModel>>,
        train_clean: ActivationSet,
        train_adversarial: ActivationSet,
        dev_clean: ActivationSet,
        test_clean: ActivationSet,
        test_adversarial: ActivationSet,
    ) -> Result<Self> {
        let rename = |mut s: ActivationSet| {
            s.layer_id = layer_id.clone();
            s
        };
        let out = LayerSets {
            model,
            train_clean: rename(train_clean),
            train_adversarial: rename(train_adversarial),
            dev_clean: rename(dev_clean),
            test_clean: rename(test_clean).relabel(Label::Clean),
            test_adversarial: rename(test_adversarial).relabel(Label::Adversarial),
            layer_id,
        };
        if out.dev_clean.samples().iter().any(|s| s.label == Label::Adversarial) {
            return Err(Error::InvalidInput(format!(
                "dev set for `{}` contains adversarial samples",
                out.layer_id
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub layers: Vec<LayerSets>,
}

impl ExperimentData {
    /// Keep only the named layer.
    pub fn restrict_to(&self, layer_id: &str) -> Result<ExperimentData> {
        let layer = self
            .layers
            .iter()
            .find(|l| l.layer_id == layer_id)
            .ok_or_else(|| Error::InvalidInput(format!("no layer `{layer_id}` in experiment")))?;
        Ok(ExperimentData {
            layers: vec![layer.clone()],
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub predictions: PredictionsFile,
}

impl ExperimentOutcome {
    /// Write `report.json`, `predictions.json` and `histogram.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_json(&dir.join("report.json"), &self.report)?;
        write_json(&dir.join("predictions.json"), &self.predictions)?;
        write_json(&dir.join("histogram.json"), &self.predictions.histogram)
    }
}

/// Ids of a seeded subset of `n` training adversarial samples.
fn adversarial_subset(set: &ActivationSet, n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 || n > set.len() {
        return Err(Error::InvalidInput(format!(
            "adversarial_sample_count {n} must be in 1..={}",
            set.len()
        )));
    }
    let mut ids: Vec<&str> = set.samples().iter().map(|s| s.id.as_str()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ids[..n].iter().map(|s| s.to_string()).collect())
}

fn keep_ids(set: &ActivationSet, ids: &[String]) -> Result<ActivationSet> {
    let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    let samples = set.samples().iter().filter(|s| keep.contains(s.id.as_str())).cloned().collect();
    ActivationSet::new(set.layer_id.clone(), set.dim(), samples)
}

pub fn run_experiment(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentOutcome> {
    run_experiment_with(spec, data, &MethodRegistry::with_builtins())
}

pub fn run_experiment_with(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    registry: &MethodRegistry,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if data.layers.is_empty() {
        return Err(Error::InvalidInput("experiment has no layer data".into()));
    }
    let method = registry.get(&spec.method)?;

    let subset = match spec.adversarial_sample_count {
        Some(n) => Some(adversarial_subset(&data.layers[0].train_adversarial, n, spec.seed)?),
        None => None,
    };
    let train_adv: Vec<ActivationSet> = data
        .layers
        .iter()
        .map(|l| match &subset {
            Some(ids) => keep_ids(&l.train_adversarial, ids),
            None => Ok(l.train_adversarial.clone()),
        })
        .collect::<Result<_>>()?;

    let dev_sets: Vec<ActivationSet> = data.layers.iter().map(|l| l.dev_clean.clone()).collect();
    let inputs = FitInputs {
        layers: data
            .layers
            .iter()
            .zip(&train_adv)
            .map(|(l, adv)| LayerData {
                layer_id: l.layer_id.clone(),
                model: l.model.clone(),
                train_clean: &l.train_clean,
                train_adversarial: adv,
            })
            .collect(),
        dev: CleanDevSet::new(&dev_sets).stage("calibrate")?,
        top_k: spec.top_k,
        alpha: spec.alpha,
    };
    let detector = method.fit(&inputs)?;

    // Labels are split off here; the detector only ever sees label-free views.
    let used = detector.layer_ids();
    let tests: Vec<ActivationSet> = used
        .iter()
        .map(|id| {
            let l = data.layers.iter().find(|l| &l.layer_id == id).expect("fitted on known layers");
            l.test_clean.concat(&l.test_adversarial)
        })
        .collect::<Result<_>>()
        .stage("classify")?;
    let labels: Vec<(String, Label)> = tests[0].samples().iter().map(|s| (s.id.clone(), s.label)).collect();
    let refs: Vec<&ActivationSet> = tests.iter().collect();
    let rows = align_refs(&refs).stage("classify")?;
    let predictions = rows
        .par_iter()
        .map(|views| detector.predict(views))
        .collect::<Result<Vec<_>>>()
        .stage("classify")?;

    let report = compute_metrics(&predictions, &labels, detector.threshold()).stage("metrics")?;
    let scored: Vec<(f64, Label)> = report.scores.iter().map(|s| (s.score, s.label)).collect();
    let histogram = Histogram::build(&scored, DEFAULT_BINS)?;
    Ok(ExperimentOutcome {
        report,
        predictions: PredictionsFile {
            tau: detector.threshold(),
            predictions,
            histogram,
        },
    })
}
