// SPDX-License-Identifier: MIT OR Apache-2.0

//! Detection methods behind a common trait, looked up by name.
//!
//! Built-ins:
//!
//! | name              | layers used | score                         |
//! |-------------------|-------------|-------------------------------|
//! | `saegis`          | first       | SAE feature activation count  |
//! | `saegis_ensemble` | all         | mean of per-layer counts      |
//! | `dense`           | first       | cosine margin to references   |
//! | `dense_ensemble`  | all         | mean of per-layer margins     |

mod dense;
mod saegis;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::activation_io::{ActivationSet, SampleView};
use crate::detector::{CleanDevSet, Prediction};
use crate::error::{Error, Result};
use crate::sae::SaeModel;

pub use dense::DenseMethod;
pub use saegis::SaegisMethod;

/// Training material for one capture location.
#[derive(Debug, Clone)]
pub struct LayerData<'a> {
    pub layer_id: String,
    /// Required by SAE-based methods, ignored by dense ones.
    pub model: Option<Arc<SaeModel>>,
    pub train_clean: &'a ActivationSet,
    pub train_adversarial: &'a ActivationSet,
}

/// Everything a method may look at while fitting. Test data is absent.
#[derive(Debug, Clone)]
pub struct FitInputs<'a> {
    pub layers: Vec<LayerData<'a>>,
    pub dev: CleanDevSet<'a>,
    pub top_k: usize,
    pub alpha: f64,
}

pub trait DetectionMethod: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    fn fit(&self, inputs: &FitInputs<'_>) -> Result<Box<dyn FittedDetector>>;
}

/// A fitted detector. Inputs are label-free views, one per layer in
/// [`FittedDetector::layer_ids`] order.
pub trait FittedDetector: Send + Sync {
    fn layer_ids(&self) -> Vec<String>;

    /// Decision threshold; verdict is adversarial iff score > threshold.
    fn threshold(&self) -> f64;

    fn predict(&self, views: &[SampleView<'_>]) -> Result<Prediction>;
}

/// Name → method table.
#[derive(Clone, Default)]
pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Arc<dyn DetectionMethod>>,
}

impl std::fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.methods.keys()).finish()
    }
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        for m in [
            Arc::new(SaegisMethod::single()) as Arc<dyn DetectionMethod>,
            Arc::new(SaegisMethod::ensemble()),
            Arc::new(DenseMethod::single()),
            Arc::new(DenseMethod::ensemble()),
        ] {
            r.register(m).expect("built-in names are unique");
        }
        r
    }

    pub fn register(&mut self, method: Arc<dyn DetectionMethod>) -> Result<()> {
        let name = method.name();
        if self.methods.contains_key(name) {
            return Err(Error::InvalidInput(format!("method `{name}` is already registered")));
        }
        self.methods.insert(name, method);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DetectionMethod>> {
        self.methods.get(name).cloned().ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown method `{name}` (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.keys().copied().collect()
    }
}

fn use_layers<'i, 'a>(inputs: &'i FitInputs<'a>, ensemble: bool) -> Result<&'i [LayerData<'a>]> {
    if inputs.layers.is_empty() {
        return Err(Error::InvalidInput("no layers supplied".into()));
    }
    Ok(if ensemble { &inputs.layers } else { &inputs.layers[..1] })
}
