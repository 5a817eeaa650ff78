// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{flat_grad, median, quantile_oracle, rel_err, rng, Params};
use rand::Rng;
use saegis::activation_io::{ActivationSet, Label, SampleRecord};
use saegis::detector::{calibrate_threshold, CleanDevSet};
use saegis::eval::{Benchmark, Confusion, EvalReport, ExperimentOutcome};
use saegis::ranker::{feature_score, relevance_from_stats, select_top_features, FeatureStats};
use saegis::sae::{train_with_observer, Sae, SaeModel, SparseCode, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn f1(o: &ExperimentOutcome) -> f64 {
    o.report.f1.unwrap_or(0.0)
}

/// In-domain runs on seeds 0..20, shared by the FPR and detection criteria.
struct InDomain {
    outcomes: Vec<ExperimentOutcome>,
    elapsed: Duration,
}

fn in_domain_runs() -> InDomain {
    let bench = Benchmark::default();
    let start = Instant::now();
    let outcomes = (0..20).map(|seed| bench.in_domain(seed).expect("in-domain run")).collect();
    InDomain {
        outcomes,
        elapsed: start.elapsed(),
    }
}

fn quantile_oracle_criterion() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..=300usize);
        let levels = r.random_range(1..=40u32);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / 4.0).collect();
        let num = r.random_range(0..1000u64);
        let alpha = num as f64 / 1000.0;
        if calibrate_threshold(&values, alpha).unwrap() != quantile_oracle(&values, num, 1000) {
            mismatches += 1;
        }
    }
    let counts: Vec<f64> = (0..100).map(f64::from).collect();
    let tau = calibrate_threshold(&counts, 0.02).unwrap();
    let fpr = counts.iter().filter(|&&c| c > tau).count() as f64 / counts.len() as f64;
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && tau == 97.0 && fpr == 0.02 && elapsed < Duration::from_secs(1),
        format!("{mismatches} mismatches / 1000 multisets; tau {tau}, dev FPR {fpr}; {elapsed:.2?}"),
    )
}

fn fpr_criterion(runs: &InDomain) -> Outcome {
    let bound = 0.02 + 3.0 * (0.02f64 * 0.98 / 100.0).sqrt();
    let fprs: Vec<f64> = runs
        .outcomes
        .iter()
        .map(|o| o.report.confusion.false_positive_rate().unwrap())
        .collect();
    let within = fprs.iter().filter(|&&f| f <= bound).count();
    let worst = fprs.iter().cloned().fold(0.0, f64::max);
    outcome(
        within >= 19 && runs.elapsed < Duration::from_secs(300),
        format!(
            "{within}/20 seeds with clean-test FPR <= {bound:.4} (worst {worst:.2}); {:.1?}",
            runs.elapsed
        ),
    )
}

fn detection_criterion(runs: &InDomain) -> (Outcome, f64) {
    let mut f1s: Vec<f64> = runs.outcomes[..5].iter().map(f1).collect();
    let listed = f1s.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(", ");
    let med = median(&mut f1s);
    (
        outcome(med >= 90.0, format!("median F1 {med:.1} over seeds 0-4 [{listed}], bar 90.0")),
        med,
    )
}

fn transfer_criterion(in_domain_median: f64) -> Outcome {
    let bench = Benchmark::default();
    let mut f1s: Vec<f64> = (0..5).map(|seed| f1(&bench.cross_domain(seed).expect("cross-domain run"))).collect();
    let listed = f1s.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(", ");
    let med = median(&mut f1s);
    outcome(
        (med - in_domain_median).abs() <= 10.0,
        format!("cross-domain median F1 {med:.1} [{listed}] vs in-domain {in_domain_median:.1}"),
    )
}

fn ensemble_criterion() -> Outcome {
    let bench = Benchmark::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let run = bench.multi_layer(seed, 3).expect("multi-layer run");
        let best = run.single.iter().map(f1).fold(0.0, f64::max);
        let ens = f1(&run.ensemble);
        ok &= ens >= best - 2.0;
        parts.push(format!("seed {seed}: ensemble {ens:.1} vs best single {best:.1}"));
    }
    // The only calibration input type is a clean dev set, which refuses adversarial samples.
    let adv = SampleRecord::new("x", Label::Adversarial, 2, vec![1.0, 0.0]).unwrap();
    let layers = [ActivationSet::new("l", 2, vec![adv]).unwrap()];
    let clean_only = CleanDevSet::new(&layers).is_err();
    ok &= clean_only;
    parts.push(format!("adversarial dev set rejected: {clean_only}"));
    outcome(ok, parts.join("; "))
}

fn gradient_criterion() -> Outcome {
    let start = Instant::now();
    let mut r = rng(6);
    let mut worst = 0.0f64;
    let mut support_mismatch = 0;
    for _ in 0..50 {
        let d_model = r.random_range(3..=8);
        let d_sae = r.random_range(4..=16);
        let k = r.random_range(1..=4.min(d_sae));
        let p = Params::random(d_model, d_sae, k, &mut r);
        let model: Sae<f64> = p.to_model();
        let batch: Vec<Vec<f64>> = (0..r.random_range(2..=6))
            .map(|_| (0..d_model).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let supports: Vec<Vec<usize>> = batch.iter().map(|x| p.support(x)).collect();
        for (x, s) in batch.iter().zip(&supports) {
            if &model.encode(x).unwrap().indices != s {
                support_mismatch += 1;
            }
        }
        let (_, grads) = model.loss_and_grad(&batch).unwrap();
        let analytic = flat_grad(&grads, d_model, d_sae);
        let numeric = p.fd_grad(&batch, &supports, 1e-5);
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-6 && support_mismatch == 0 && elapsed < Duration::from_secs(30),
        format!("worst relative error {worst:.2e} over 50 models; support mismatches {support_mismatch}; {elapsed:.2?}"),
    )
}

fn invariants_criterion() -> Outcome {
    let mut r = rng(7);
    let model = SaeModel::init(16, 64, 4, 7).unwrap();
    let mut violations = 0;
    for _ in 0..100_000 {
        let x: Vec<f32> = (0..16).map(|_| r.random_range(-3.0f32..3.0)).collect();
        let code = model.encode(&x).unwrap();
        if code.len() > 4 || code.values.iter().any(|&v| v <= 0.0) {
            violations += 1;
        }
    }

    let d = 16;
    let samples = (0..40)
        .map(|i| {
            let data: Vec<f32> = (0..8 * d).map(|_| r.random_range(-1.0f32..1.0)).collect();
            SampleRecord::new(format!("s{i}"), Label::Clean, d, data).unwrap()
        })
        .collect();
    let data = ActivationSet::new("l", d, samples).unwrap();
    let cfg = TrainConfig {
        steps: 1000,
        batch_size: 32,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let mut worst_norm = 0.0f64;
    let mut observed = 0;
    train_with_observer(&SaeModel::init(d, 48, 4, 3).unwrap(), &data, &cfg, |_, m| {
        worst_norm = worst_norm.max(m.max_decoder_norm_deviation());
        observed += 1;
    })
    .unwrap();
    outcome(
        violations == 0 && worst_norm <= 1e-4 && observed == 1000,
        format!(
            "{violations} sparsity violations in 1e5 encodes; max |‖W_dec col‖ − 1| = {worst_norm:.2e} over {observed} steps"
        ),
    )
}

fn code(row: &[f32]) -> SparseCode<f32> {
    let (indices, values) = row.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| (i, *v)).unzip();
    SparseCode {
        d_sae: row.len(),
        indices,
        values,
    }
}

fn scoring_criterion() -> Outcome {
    let tokens = |a: &[f32]| a.iter().map(|&v| code(&[v])).collect::<Vec<_>>();
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    check("never active", feature_score(&tokens(&[0.0, 0.0, 0.0, 0.0]), 0).unwrap() == 0.0);
    check("single token", feature_score(&tokens(&[2.0, 0.0, 0.0, 0.0]), 0).unwrap() == 2.0 * 2f64.ln());
    check("peak and extent", feature_score(&tokens(&[1.0, 3.0, 0.0, 2.0]), 0).unwrap() == 3.0 * 4f64.ln());

    // Per-sample scores {1, 2} clean and {4, 6} adversarial, one firing token each.
    let stats = |p: f32| FeatureStats {
        peak: vec![p],
        fired: vec![1],
    };
    let unit_log = |v: f64| v - 1.0;
    let rel = relevance_from_stats(&[stats(1.0), stats(2.0)], &[stats(4.0), stats(6.0)], unit_log).unwrap();
    check("mean difference", rel == vec![3.5]);
    let same = [stats(1.5), stats(0.0)];
    check("identical sets", relevance_from_stats(&same, &same, f64::ln).unwrap() == vec![0.0]);

    check("tie break", select_top_features(&[0.5, 3.5, 2.0, 3.5], 2).unwrap() == vec![1, 3]);
    let mut all = select_top_features(&[0.3, 0.1, 0.2], 3).unwrap();
    all.sort();
    check("K = d_sae", all == vec![0, 1, 2]);
    check("all equal", select_top_features(&[1.0; 6], 4).unwrap() == vec![0, 1, 2, 3]);

    let mut r = rng(8);
    let mut base_mismatch = 0;
    for _ in 0..100 {
        let d = r.random_range(4..=64);
        let table = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<FeatureStats> {
            (0..n)
                .map(|_| {
                    let mut peak: Vec<f32> = (0..d).map(|_| r.random_range(0.0f32..4.0)).collect();
                    let mut fired: Vec<u32> = (0..d).map(|_| r.random_range(0..30)).collect();
                    // A duplicated column keeps exact ties in play.
                    peak[d - 1] = peak[0];
                    fired[d - 1] = fired[0];
                    FeatureStats { peak, fired }
                })
                .collect()
        };
        let (n_clean, n_adv) = (r.random_range(1..20), r.random_range(1..20));
        let clean = table(&mut r, n_clean);
        let adv = table(&mut r, n_adv);
        let k = r.random_range(1..=d);
        let ln = relevance_from_stats(&clean, &adv, f64::ln).unwrap();
        let l2 = relevance_from_stats(&clean, &adv, f64::log2).unwrap();
        if select_top_features(&ln, k).unwrap() != select_top_features(&l2, k).unwrap() {
            base_mismatch += 1;
        }
    }
    check("log-base invariance", base_mismatch == 0);
    let ok = fails.is_empty();
    outcome(
        ok,
        if ok {
            "8 worked examples exact; log-base selection identical on 100 tables".to_string()
        } else {
            format!("failed: {}", fails.join(", "))
        },
    )
}

fn metrics_criterion() -> Outcome {
    let r = EvalReport::from_confusion(
        Confusion {
            tp: 95,
            fp: 1,
            tn: 99,
            fn_: 5,
        },
        0.0,
        vec![],
    );
    let got = (r.precision_1dp, r.recall_1dp, r.f1_1dp);
    outcome(
        got == (Some(98.9), Some(95.0), Some(96.9)),
        format!("P/R/F1 = {:?}/{:?}/{:?}", got.0.unwrap(), got.1.unwrap(), got.2.unwrap()),
    )
}

fn quickstart(dir: &std::path::Path) -> Result<Vec<u8>, String> {
    let bin = env!("CARGO_BIN_EXE_saegis");
    let steps: &[&[&str]] = &[
        &[
            "gen-synthetic", "--out", "data", "--dim", "64", "--clean", "1000", "--adv", "200", "--dict", "256",
            "--planted", "16", "--strength", "0.6", "--noise", "0.2", "--seed", "0",
        ],
        &[
            "train", "--acts", "data/train-clean", "--acts", "data/train-adv", "--d-sae", "512", "--k", "8",
            "--steps", "3000", "--lr", "0.002", "--batch", "64", "--seed", "0", "--out", "sae.bin",
        ],
        &[
            "select-features", "--sae", "sae.bin", "--clean", "data/train-clean", "--adv", "data/train-adv",
            "--top-k", "64", "--out", "ranking.json",
        ],
        &[
            "calibrate", "--dev", "data/dev-clean", "--alpha", "0.02", "--layer", "synthetic:sae.bin:ranking.json",
            "--out", "profile.json",
        ],
        &["detect", "--profile", "profile.json", "--acts", "data/test", "--out", "predictions.json"],
        &["evaluate", "--pred", "predictions.json", "--acts", "data/test", "--out", "report.json"],
    ];
    for args in steps {
        let out = Command::new(bin).args(*args).arg("--quiet").current_dir(dir).output().unwrap();
        if !out.status.success() {
            return Err(format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())
}

fn determinism_criterion() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = match (quickstart(a.path()), quickstart(b.path())) {
        (Ok(ra), Ok(rb)) => (ra, rb),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let report: EvalReport = serde_json::from_slice(&ra).unwrap();
    outcome(
        ra == rb,
        format!(
            "report.json {} bytes, identical: {} (quickstart F1 {:.1})",
            ra.len(),
            ra == rb,
            report.f1.unwrap_or(0.0)
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!("criterion {n:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "quantile oracle", quantile_oracle_criterion());
    let runs = in_domain_runs();
    record(2, "FPR control", fpr_criterion(&runs));
    let (detection, in_domain_median) = detection_criterion(&runs);
    record(3, "end-to-end detection", detection);
    record(4, "cross-distribution transfer", transfer_criterion(in_domain_median));
    record(5, "ensemble", ensemble_criterion());
    record(6, "gradient check", gradient_criterion());
    record(7, "sparsity and normalization", invariants_criterion());
    record(8, "feature scoring suite", scoring_criterion());
    record(9, "metric fidelity", metrics_criterion());
    record(10, "determinism", determinism_criterion());

    let failed: Vec<u32> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
