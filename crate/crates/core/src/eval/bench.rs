// SPDX-License-Identifier: MIT OR Apache-2.0

//! The planted-feature synthetic benchmark, wired through the experiment
//! runner: in-domain, cross-domain and multi-layer settings.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentData, ExperimentOutcome, ExperimentSpec, LayerPaths, LayerSets};
use crate::activation_io::{generate_synthetic_layers, ActivationSet, ProtocolSplit, SyntheticConfig};
use crate::error::{Result, StageExt};
use crate::sae::{train, SaeModel, TrainConfig};

/// Mixed into the seed of the second domain in cross-domain runs.
const DOMAIN_B_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub data: SyntheticConfig,
    pub d_sae: usize,
    pub k: usize,
    pub train: TrainConfig,
    #[serde(rename = "K")]
    pub top_k: usize,
    pub alpha: f64,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark {
            data: SyntheticConfig::default(),
            d_sae: 512,
            k: 8,
            train: TrainConfig::default(),
            top_k: 64,
            alpha: 0.02,
        }
    }
}

/// Per-layer and ensemble results of a multi-layer run.
#[derive(Debug, Clone)]
pub struct MultiLayerOutcome {
    pub single: Vec<ExperimentOutcome>,
    pub ensemble: ExperimentOutcome,
}

fn placeholder_paths(layer_id: &str) -> LayerPaths {
    LayerPaths {
        layer_id: layer_id.to_string(),
        sae: None,
        train_clean: "train-clean".into(),
        train_adversarial: "train-adv".into(),
        dev_clean: "dev-clean".into(),
        test_clean: "test-clean".into(),
        test_adversarial: "test-adv".into(),
    }
}

impl Benchmark {
    fn data_cfg(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            seed,
            ..self.data.clone()
        }
    }

    /// Train an SAE on the union of `sets`.
    pub fn train_sae(&self, sets: &[&ActivationSet], seed: u64) -> Result<Arc<SaeModel>> {
        let pool = ActivationSet::pooled(sets[0].layer_id.clone(), sets)?;
        let init = SaeModel::init(pool.dim(), self.d_sae, self.k, seed)?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let (model, _) = train(&init, &pool, &cfg).stage("train")?;
        Ok(Arc::new(model))
    }

    fn spec(&self, name: &str, method: &str, seed: u64, layer_ids: &[String]) -> ExperimentSpec {
        ExperimentSpec {
            name: name.to_string(),
            method: method.to_string(),
            top_k: self.top_k,
            alpha: self.alpha,
            seed,
            adversarial_sample_count: None,
            layers: layer_ids.iter().map(|id| placeholder_paths(id)).collect(),
        }
    }

    fn layer_sets(layer_id: &str, model: Arc<SaeModel>, split: ProtocolSplit) -> Result<LayerSets> {
        LayerSets::new(
            layer_id.to_string(),
            Some(model),
            split.train_clean,
            split.train_adversarial,
            split.dev_clean,
            split.test_clean,
            split.test_adversarial,
        )
    }

    /// Generate, train and return the in-memory experiment for one layer.
    pub fn in_domain_data(&self, seed: u64) -> Result<ExperimentData> {
        let layer = generate_synthetic_layers(&self.data_cfg(seed), &["synthetic"])?.remove(0);
        let split = layer.protocol_split();
        let model = self.train_sae(&[&split.train_clean, &split.train_adversarial], seed)?;
        Ok(ExperimentData {
            layers: vec![Self::layer_sets("synthetic", model, split)?],
        })
    }

    /// Train, rank, calibrate and test on one synthetic domain.
    pub fn in_domain(&self, seed: u64) -> Result<ExperimentOutcome> {
        let data = self.in_domain_data(seed)?;
        run_experiment(&self.spec("in-domain", "saegis", seed, &["synthetic".into()]), &data)
    }

    /// Rank on domain A; calibrate and test on domain B, whose clean
    /// dictionary differs and whose planted atoms are shared with A.
    ///
    /// The SAE sees domain A's training data and domain B's clean training
    /// data, so both domains are in its span; no B adversarial sample is
    /// used before testing.
    pub fn cross_domain(&self, seed: u64) -> Result<ExperimentOutcome> {
        let a_cfg = SyntheticConfig {
            planted_seed: Some(seed),
            ..self.data_cfg(seed)
        };
        let b_cfg = SyntheticConfig {
            planted_seed: Some(seed),
            ..self.data_cfg(seed ^ DOMAIN_B_SALT)
        };
        let a = generate_synthetic_layers(&a_cfg, &["synthetic"])?.remove(0).protocol_split();
        let b = generate_synthetic_layers(&b_cfg, &["synthetic"])?.remove(0).protocol_split();
        let model = self.train_sae(&[&a.train_clean, &a.train_adversarial, &b.train_clean], seed)?;
        let layer = LayerSets::new(
            "synthetic".into(),
            Some(model),
            a.train_clean,
            a.train_adversarial,
            b.dev_clean,
            b.test_clean,
            b.test_adversarial,
        )?;
        let data = ExperimentData { layers: vec![layer] };
        run_experiment(&self.spec("cross-domain", "saegis", seed, &["synthetic".into()]), &data)
    }

    /// Shared-structure data at `num_layers` capture locations, one SAE each.
    pub fn multi_layer_data(&self, seed: u64, num_layers: usize) -> Result<ExperimentData> {
        let ids: Vec<String> = (0..num_layers).map(|i| format!("layer{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let layers = generate_synthetic_layers(&self.data_cfg(seed), &id_refs)?;
        let layers = ids
            .iter()
            .zip(layers)
            .enumerate()
            .map(|(i, (id, layer))| {
                let split = layer.protocol_split();
                let model = self.train_sae(&[&split.train_clean, &split.train_adversarial], seed + i as u64)?;
                Self::layer_sets(id, model, split)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentData { layers })
    }

    /// Every layer alone, then the uniform ensemble over all of them.
    pub fn multi_layer(&self, seed: u64, num_layers: usize) -> Result<MultiLayerOutcome> {
        let data = self.multi_layer_data(seed, num_layers)?;
        let ids: Vec<String> = data.layers.iter().map(|l| l.layer_id.clone()).collect();
        let single = ids
            .iter()
            .map(|id| run_experiment(&self.spec(id, "saegis", seed, std::slice::from_ref(id)), &data.restrict_to(id)?))
            .collect::<Result<Vec<_>>>()?;
        let ensemble = run_experiment(&self.spec("ensemble", "saegis_ensemble", seed, &ids), &data)?;
        Ok(MultiLayerOutcome { single, ensemble })
    }
}
