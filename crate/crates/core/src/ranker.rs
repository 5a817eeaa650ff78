// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attack-relevance scoring of SAE latents.
//!
//! A latent's per-sample score is its peak activation over image tokens
//! times `ln(1 + number of tokens where it fires)`. Its attack relevance
//! is the mean score over adversarial samples minus the mean over clean
//! samples. The top `K` latents by relevance form the detector's feature
//! set.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_io::{ActivationSet, SampleView};
use crate::error::{Error, Result};
use crate::sae::{SaeModel, SparseCode};

/// Per-sample peak activation and firing count of every latent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub peak: Vec<f32>,
    pub fired: Vec<u32>,
}

impl FeatureStats {
    pub fn from_codes(codes: &[SparseCode<f32>], d_sae: usize) -> Self {
        let mut peak = vec![0.0f32; d_sae];
        let mut fired = vec![0u32; d_sae];
        for code in codes {
            for (i, v) in code.iter() {
                // Codes are strictly positive, so every stored entry counts as firing.
                fired[i] += 1;
                peak[i] = peak[i].max(v);
            }
        }
        FeatureStats { peak, fired }
    }

    /// `peak · log(1 + fired)` for every latent, with a caller-chosen logarithm.
    pub fn scores_with(&self, log: impl Fn(f64) -> f64) -> Vec<f64> {
        self.peak
            .iter()
            .zip(&self.fired)
            .map(|(&p, &n)| if n == 0 { 0.0 } else { p as f64 * log(1.0 + n as f64) })
            .collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.scores_with(f64::ln)
    }
}

/// Score of latent `feature` over one sample's token codes.
pub fn feature_score(codes: &[SparseCode<f32>], feature: usize) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::InvalidInput("feature score needs at least one token".into()));
    }
    let d_sae = codes[0].d_sae;
    if feature >= d_sae {
        return Err(Error::InvalidInput(format!("feature {feature} out of range for d_sae {d_sae}")));
    }
    let mut peak = 0.0f32;
    let mut fired = 0u32;
    for c in codes {
        let a = c.get(feature);
        if a > 0.0 {
            fired += 1;
            peak = peak.max(a);
        }
    }
    Ok(if fired == 0 {
        0.0
    } else {
        peak as f64 * (1.0 + fired as f64).ln()
    })
}

/// Encode every token of a sample and summarise per latent.
pub fn sample_stats(model: &SaeModel, sample: SampleView<'_>) -> Result<FeatureStats> {
    if sample.dim() != model.d_model() {
        return Err(Error::Dimension(format!(
            "sample `{}` has dim {} but the SAE expects {}",
            sample.id,
            sample.dim(),
            model.d_model()
        )));
    }
    let codes: Vec<SparseCode<f32>> = sample.tokens().map(|t| model.encode(t)).collect::<Result<_>>()?;
    Ok(FeatureStats::from_codes(&codes, model.d_sae()))
}

/// Mean per-latent score over a set, accumulated in sample order.
fn mean_scores(model: &SaeModel, set: &ActivationSet, log: &(dyn Fn(f64) -> f64 + Sync)) -> Result<Vec<f64>> {
    const CHUNK: usize = 64;
    let mut sum = vec![0.0f64; model.d_sae()];
    for chunk in set.samples().chunks(CHUNK) {
        let scored: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|s| sample_stats(model, s.view()).map(|st| st.scores_with(log)))
            .collect::<Result<_>>()?;
        for row in &scored {
            for (acc, v) in sum.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let n = set.len() as f64;
    Ok(sum.into_iter().map(|v| v / n).collect())
}

/// Mean adversarial score minus mean clean score, per latent.
pub fn attack_relevance(clean: &ActivationSet, adversarial: &ActivationSet, model: &SaeModel) -> Result<Vec<f64>> {
    attack_relevance_with(clean, adversarial, model, &f64::ln)
}

pub fn attack_relevance_with(
    clean: &ActivationSet,
    adversarial: &ActivationSet,
    model: &SaeModel,
    log: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<Vec<f64>> {
    if clean.is_empty() || adversarial.is_empty() {
        return Err(Error::InvalidInput("attack relevance needs nonempty clean and adversarial sets".into()));
    }
    for set in [clean, adversarial] {
        if set.dim() != model.d_model() {
            return Err(Error::Dimension(format!(
                "set `{}` has dim {} but the SAE expects {}",
                set.layer_id,
                set.dim(),
                model.d_model()
            )));
        }
    }
    let c = mean_scores(model, clean, log)?;
    let a = mean_scores(model, adversarial, log)?;
    Ok(a.iter().zip(&c).map(|(a, c)| a - c).collect())
}

/// Relevance from precomputed per-sample statistics.
pub fn relevance_from_stats(clean: &[FeatureStats], adversarial: &[FeatureStats], log: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    if clean.is_empty() || adversarial.is_empty() {
        return Err(Error::InvalidInput("empty set".into()));
    }
    let d = clean[0].peak.len();
    let mean = |rows: &[FeatureStats]| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; d];
        for r in rows {
            if r.peak.len() != d {
                return Err(Error::Dimension("feature statistics differ in width".into()));
            }
            for (a, s) in acc.iter_mut().zip(r.scores_with(&log)) {
                *a += s;
            }
        }
        Ok(acc.into_iter().map(|v| v / rows.len() as f64).collect())
    };
    let c = mean(clean)?;
    let a = mean(adversarial)?;
    Ok(a.iter().zip(&c).map(|(a, c)| a - c).collect())
}

/// Indices of the `k` highest scores, descending; ties by ascending index.
pub fn select_top_features(attack_scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > attack_scores.len() {
        return Err(Error::InvalidInput(format!(
            "K = {k} exceeds d_sae = {}",
            attack_scores.len()
        )));
    }
    if attack_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("attack scores".into()));
    }
    let mut idx: Vec<usize> = (0..attack_scores.len()).collect();
    idx.sort_by(|&a, &b| attack_scores[b].total_cmp(&attack_scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Selected attack-relevant latents for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanking {
    pub layer_id: String,
    pub d_sae: usize,
    /// Full relevance vector when available.
    pub attack_scores: Option<Vec<f64>>,
    pub selected: Vec<usize>,
    pub selected_scores: Vec<f64>,
    pub clean_count: usize,
    pub adversarial_count: usize,
}

impl FeatureRanking {
    pub fn from_scores(
        layer_id: impl Into<String>,
        attack_scores: Vec<f64>,
        k: usize,
        clean_count: usize,
        adversarial_count: usize,
    ) -> Result<Self> {
        let selected = select_top_features(&attack_scores, k)?;
        let selected_scores = selected.iter().map(|&i| attack_scores[i]).collect();
        Ok(FeatureRanking {
            layer_id: layer_id.into(),
            d_sae: attack_scores.len(),
            attack_scores: Some(attack_scores),
            selected,
            selected_scores,
            clean_count,
            adversarial_count,
        })
    }

    /// Score both sets with `model` and keep the top `k` latents.
    pub fn fit(clean: &ActivationSet, adversarial: &ActivationSet, model: &SaeModel, k: usize) -> Result<Self> {
        let scores = attack_relevance(clean, adversarial, model)?;
        Self::from_scores(clean.layer_id.clone(), scores, k, clean.len(), adversarial.len())
    }

    pub fn k(&self) -> usize {
        self.selected.len()
    }

    /// Same ranking truncated to its first `k` selections.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.selected.len() {
            return Err(Error::InvalidInput(format!("cannot take {k} of {} features", self.selected.len())));
        }
        let mut out = self.clone();
        out.selected.truncate(k);
        out.selected_scores.truncate(k);
        Ok(out)
    }

    /// Membership mask over all latents.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.d_sae];
        for &i in &self.selected {
            m[i] = true;
        }
        m
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in &self.selected {
            if i >= self.d_sae {
                return Err(Error::Format(format!("selected index {i} >= d_sae {}", self.d_sae)));
            }
            if !seen.insert(i) {
                return Err(Error::Format(format!("selected index {i} repeated")));
            }
        }
        if self.selected_scores.len() != self.selected.len() {
            return Err(Error::Format("attack_scores_selected length differs from selected".into()));
        }
        if let Some(full) = &self.attack_scores {
            if full.len() != self.d_sae {
                return Err(Error::Format("attack_scores_full length differs from d_sae".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankingFile {
    layer_id: String,
    d_sae: usize,
    #[serde(rename = "K")]
    k: usize,
    selected: Vec<usize>,
    attack_scores_selected: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attack_scores_full: Option<Vec<f64>>,
    clean_count: usize,
    adversarial_count: usize,
}

pub fn save_ranking(ranking: &FeatureRanking, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ranking.validate()?;
    let file = RankingFile {
        layer_id: ranking.layer_id.clone(),
        d_sae: ranking.d_sae,
        k: ranking.k(),
        selected: ranking.selected.clone(),
        attack_scores_selected: ranking.selected_scores.clone(),
        attack_scores_full: ranking.attack_scores.clone(),
        clean_count: ranking.clean_count,
        adversarial_count: ranking.adversarial_count,
    };
    crate::json::write_json(path, &file)
}

pub fn load_ranking(path: impl AsRef<Path>) -> Result<FeatureRanking> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RankingFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if file.k != file.selected.len() {
        return Err(Error::Format(format!(
            "K = {} but {} features are selected",
            file.k,
            file.selected.len()
        )));
    }
    let ranking = FeatureRanking {
        layer_id: file.layer_id,
        d_sae: file.d_sae,
        attack_scores: file.attack_scores_full,
        selected: file.selected,
        selected_scores: file.attack_scores_selected,
        clean_count: file.clean_count,
        adversarial_count: file.adversarial_count,
    };
    ranking.validate()?;
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub a: usize,
    pub b: usize,
    pub count: usize,
}

/// One exclusive Venn region: features selected by exactly `members`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VennRegion {
    pub members: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub labels: Vec<String>,
    pub set_sizes: Vec<usize>,
    pub pairwise: Vec<PairOverlap>,
    pub intersection_all: Vec<usize>,
    /// Present for up to eight rankings.
    pub regions: Option<Vec<VennRegion>>,
}

const MAX_VENN_SETS: usize = 8;

/// Intersections of the selected sets of several rankings.
pub fn ranking_overlap(rankings: &[FeatureRanking]) -> Result<OverlapReport> {
    if rankings.len() < 2 {
        return Err(Error::InvalidInput("overlap needs at least two rankings".into()));
    }
    let d_sae = rankings[0].d_sae;
    if let Some(r) = rankings.iter().find(|r| r.d_sae != d_sae) {
        return Err(Error::Dimension(format!(
            "ranking `{}` has d_sae {} but the first has {d_sae}",
            r.layer_id, r.d_sae
        )));
    }
    let sets: Vec<BTreeSet<usize>> = rankings.iter().map(|r| r.selected.iter().copied().collect()).collect();

    let mut pairwise = Vec::new();
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            pairwise.push(PairOverlap {
                a,
                b,
                count: sets[a].intersection(&sets[b]).count(),
            });
        }
    }
    let intersection_all: Vec<usize> = sets[0]
        .iter()
        .copied()
        .filter(|i| sets[1..].iter().all(|s| s.contains(i)))
        .collect();

    let regions = (sets.len() <= MAX_VENN_SETS).then(|| {
        let mut counts = vec![0usize; 1 << sets.len()];
        let union: BTreeSet<usize> = sets.iter().flatten().copied().collect();
        for i in union {
            let pattern = sets
                .iter()
                .enumerate()
                .filter(|(_, s)| s.contains(&i))
                .fold(0usize, |acc, (n, _)| acc | (1 << n));
            counts[pattern] += 1;
        }
        (1..counts.len())
            .map(|pattern| VennRegion {
                members: (0..sets.len()).filter(|n| pattern & (1 << n) != 0).collect(),
                count: counts[pattern],
            })
            .collect()
    });

    Ok(OverlapReport {
        labels: rankings.iter().map(|r| r.layer_id.clone()).collect(),
        set_sizes: sets.iter().map(BTreeSet::len).collect(),
        pairwise,
        intersection_all,
        regions,
    })
}
