// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::{Arc, OnceLock};

use saegis::activation_io::Label;
use saegis::detector::{Prediction, Verdict};
use saegis::eval::{
    run_experiment, run_experiment_with, sweep, Benchmark, ExperimentData, ExperimentSpec, LayerPaths, LayerSets,
    SweepParam, SWEEP_HEADER,
};
use saegis::method::{DetectionMethod, FitInputs, FittedDetector, MethodRegistry};
use saegis::sae::SaeModel;
use saegis::{Error, Result, SampleView};

const SEED: u64 = 0;

/// One trained benchmark layer shared by every test in this file.
fn data() -> &'static ExperimentData {
    static DATA: OnceLock<ExperimentData> = OnceLock::new();
    DATA.get_or_init(|| Benchmark::default().in_domain_data(SEED).unwrap())
}

fn spec(method: &str) -> ExperimentSpec {
    ExperimentSpec {
        name: "harness".into(),
        method: method.into(),
        top_k: 64,
        alpha: 0.02,
        seed: SEED,
        adversarial_sample_count: None,
        layers: vec![LayerPaths {
            layer_id: "synthetic".into(),
            sae: None,
            train_clean: "train-clean".into(),
            train_adversarial: "train-adv".into(),
            dev_clean: "dev-clean".into(),
            test_clean: "test-clean".into(),
            test_adversarial: "test-adv".into(),
        }],
    }
}

fn json<T: serde::Serialize>(x: &T) -> String {
    serde_json::to_string(x).unwrap()
}

#[test]
fn runs_are_deterministic() {
    let a = run_experiment(&spec("saegis"), data()).unwrap();
    let b = run_experiment(&spec("saegis"), data()).unwrap();
    assert_eq!(json(&a.report), json(&b.report));
    assert_eq!(json(&a.predictions), json(&b.predictions));
}

#[test]
fn clean_copies_as_attacks_are_flagged_at_alpha_rate() {
    let l = &data().layers[0];
    let half = l.test_clean.len() / 2;
    let fake = LayerSets::new(
        l.layer_id.clone(),
        l.model.clone(),
        l.train_clean.clone(),
        l.train_adversarial.clone(),
        l.dev_clean.clone(),
        l.test_clean.slice(0..half),
        l.test_clean.slice(half..l.test_clean.len()),
    )
    .unwrap();
    let out = run_experiment(&spec("saegis"), &ExperimentData { layers: vec![fake] }).unwrap();
    let recall = out.report.recall.unwrap();
    assert!(recall <= 15.0, "recall {recall} on clean samples labeled adversarial");
}

#[test]
fn singleton_sweep_equals_single_run() {
    let s = spec("saegis");
    let table = sweep(&s, data(), SweepParam::TopK, &["64".into()], &MethodRegistry::with_builtins()).unwrap();
    let run = run_experiment(&s, data()).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].report, run.report);
    let csv = table.to_csv();
    assert!(csv.starts_with(SWEEP_HEADER));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn recall_grows_with_selected_features() {
    let values: Vec<String> = [8, 16, 32, 64, 128].iter().map(|k| k.to_string()).collect();
    let table = sweep(&spec("saegis"), data(), SweepParam::TopK, &values, &MethodRegistry::with_builtins()).unwrap();
    let recalls: Vec<f64> = table.rows.iter().map(|r| r.report.recall.unwrap()).collect();
    println!("K sweep recall: {recalls:?}");
    for w in recalls.windows(2) {
        assert!(w[1] >= w[0], "recall fell as K grew: {recalls:?}");
    }
}

#[test]
fn ten_adversarial_samples_suffice() {
    let mut s = spec("saegis");
    s.adversarial_sample_count = Some(10);
    let out = run_experiment(&s, data()).unwrap();
    println!("F1 with 10 adversarial samples: {:?}", out.report.f1);
    assert!(out.report.f1_fraction() >= 0.75, "{:?}", out.report.f1);
}

#[test]
fn adversarial_subset_larger_than_pool_is_rejected() {
    let mut s = spec("saegis");
    s.adversarial_sample_count = Some(data().layers[0].train_adversarial.len() + 1);
    assert!(run_experiment(&s, data()).is_err());
}

#[test]
fn dense_baselines_run() {
    for method in ["dense", "dense_ensemble"] {
        let out = run_experiment(&spec(method), data()).unwrap();
        let c = &out.report.confusion;
        assert_eq!(c.tp + c.fp + c.tn + c.fn_, c.total());
        assert_eq!(out.predictions.tau, 0.0);
    }
}

#[test]
fn failures_name_their_stage() {
    let l = &data().layers[0];
    let narrow = Arc::new(SaeModel::init(l.train_clean.dim() / 2, 32, 4, 1).unwrap());
    let bad = LayerSets::new(
        l.layer_id.clone(),
        Some(narrow),
        l.train_clean.clone(),
        l.train_adversarial.clone(),
        l.dev_clean.clone(),
        l.test_clean.clone(),
        l.test_adversarial.clone(),
    )
    .unwrap();
    match run_experiment(&spec("saegis"), &ExperimentData { layers: vec![bad] }) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "rank"),
        other => panic!("expected a rank-stage error, got {other:?}"),
    }
}

#[test]
fn unknown_method_lists_alternatives() {
    let err = run_experiment(&spec("nope"), data()).unwrap_err().to_string();
    assert!(err.contains("saegis_ensemble"), "{err}");
}

/// Flags every sample whose first token has a positive first coordinate.
struct FirstCoordinate;

struct FirstCoordinateDetector(String);

impl DetectionMethod for FirstCoordinate {
    fn name(&self) -> &'static str {
        "first_coordinate"
    }

    fn summary(&self) -> &'static str {
        "sign of the first coordinate of the first token"
    }

    fn fit(&self, inputs: &FitInputs<'_>) -> Result<Box<dyn FittedDetector>> {
        Ok(Box::new(FirstCoordinateDetector(inputs.layers[0].layer_id.clone())))
    }
}

impl FittedDetector for FirstCoordinateDetector {
    fn layer_ids(&self) -> Vec<String> {
        vec![self.0.clone()]
    }

    fn threshold(&self) -> f64 {
        0.0
    }

    fn predict(&self, views: &[SampleView<'_>]) -> Result<Prediction> {
        let v = &views[0];
        let score = f64::from(v.tokens().next().map_or(0.0, |t| t[0]));
        let verdict = if score > 0.0 { Verdict::Adversarial } else { Verdict::Clean };
        Ok(Prediction {
            id: v.id.to_string(),
            score,
            verdict,
        })
    }
}

#[test]
fn registered_methods_run_through_the_harness() {
    let mut registry = MethodRegistry::with_builtins();
    registry.register(Arc::new(FirstCoordinate)).unwrap();
    assert!(registry.register(Arc::new(FirstCoordinate)).is_err());
    let out = run_experiment_with(&spec("first_coordinate"), data(), &registry).unwrap();
    let flagged = out.report.scores.iter().filter(|s| s.verdict.is_adversarial()).count();
    assert_eq!(flagged, out.report.confusion.tp + out.report.confusion.fp);
}

#[test]
fn adversarial_dev_data_is_refused() {
    let l = &data().layers[0];
    let err = LayerSets::new(
        l.layer_id.clone(),
        l.model.clone(),
        l.train_clean.clone(),
        l.train_adversarial.clone(),
        l.train_adversarial.relabel(Label::Adversarial),
        l.test_clean.clone(),
        l.test_adversarial.clone(),
    );
    assert!(err.is_err());
}
