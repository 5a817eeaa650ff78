// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-atom synthetic activations.
//!
//! Each layer owns a dictionary of unit-norm atoms. The last
//! `planted_attack_atoms` of them are reserved: clean tokens are sparse
//! non-negative combinations of the other atoms plus Gaussian noise, and
//! adversarial tokens additionally carry `attack_strength`-scaled energy on
//! a per-sample subset of the reserved atoms.
//!
//! Random streams:
//! - sample structure (token counts, codes, attack subsets) comes from
//!   `seed` and is shared by every layer, so multi-layer dumps describe the
//!   same inputs;
//! - non-planted atoms come from `seed` and the layer index;
//! - planted atoms come from `planted_seed` (defaults to `seed`) and the
//!   layer index, so two configs with different `seed` but equal
//!   `planted_seed` share only their attack directions;
//! - noise comes from `seed` and the layer index.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{ActivationSet, Label, SampleRecord};
use crate::error::{Error, Result};

const STREAM_STRUCTURE: u64 = 1;
const STREAM_CLEAN_ATOMS: u64 = 1 << 20;
const STREAM_PLANTED_ATOMS: u64 = 2 << 20;
const STREAM_NOISE: u64 = 3 << 20;

/// Coefficients of active atoms are drawn uniformly from this range.
const COEF_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub num_clean: usize,
    pub num_adversarial: usize,
    /// Inclusive range of tokens per sample.
    pub tokens_per_sample: (usize, usize),
    pub dictionary_size: usize,
    /// Active non-planted atoms per token.
    pub code_sparsity: usize,
    pub planted_attack_atoms: usize,
    /// Planted atoms switched on per adversarial sample.
    pub attack_atoms_per_sample: usize,
    pub attack_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub planted_seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 64,
            num_clean: 1000,
            num_adversarial: 200,
            tokens_per_sample: (16, 24),
            dictionary_size: 256,
            code_sparsity: 4,
            planted_attack_atoms: 16,
            attack_atoms_per_sample: 4,
            attack_strength: 0.6,
            noise_sigma: 0.2,
            seed: 0,
            planted_seed: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.planted_attack_atoms >= self.dictionary_size {
            return bad(format!(
                "planted_attack_atoms ({}) must be < dictionary_size ({})",
                self.planted_attack_atoms, self.dictionary_size
            ));
        }
        if self.code_sparsity > self.dictionary_size - self.planted_attack_atoms {
            return bad(format!(
                "code_sparsity {} exceeds the {} non-planted atoms",
                self.code_sparsity,
                self.dictionary_size - self.planted_attack_atoms
            ));
        }
        if self.attack_atoms_per_sample > self.planted_attack_atoms {
            return bad(format!(
                "attack_atoms_per_sample {} exceeds planted_attack_atoms {}",
                self.attack_atoms_per_sample, self.planted_attack_atoms
            ));
        }
        if self.num_adversarial > 0 && self.attack_atoms_per_sample == 0 && self.attack_strength > 0.0 {
            return bad("attack_atoms_per_sample must be positive".into());
        }
        if !(self.attack_strength >= 0.0 && self.attack_strength.is_finite()) {
            return bad("attack_strength must be finite and non-negative".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        let (lo, hi) = self.tokens_per_sample;
        if lo == 0 || lo > hi {
            return bad(format!("tokens_per_sample range {lo}..={hi} is invalid"));
        }
        Ok(())
    }

    /// Index of the first planted atom; planted atoms occupy the tail of the dictionary.
    pub fn first_planted(&self) -> usize {
        self.dictionary_size - self.planted_attack_atoms
    }
}

/// One layer's generated data plus its generating dictionary.
#[derive(Debug, Clone)]
pub struct SyntheticLayer {
    pub clean: ActivationSet,
    pub adversarial: ActivationSet,
    /// `dictionary_size` unit-norm atoms of length `dim`.
    pub atoms: Vec<Vec<f64>>,
    /// Indices into `atoms` reserved for attacks.
    pub planted: Vec<usize>,
}

impl SyntheticLayer {
    pub fn planted_atoms(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.planted.iter().map(|&i| self.atoms[i].as_slice())
    }

    /// Split into the train / dev / test partitions used throughout the
    /// harness: clean 80/10/10, adversarial 50/50, in generation order.
    pub fn protocol_split(&self) -> ProtocolSplit {
        ProtocolSplit::new(&self.clean, &self.adversarial)
    }
}

/// Clean 80/10/10 and adversarial 50/50 partitions.
#[derive(Debug, Clone)]
pub struct ProtocolSplit {
    pub train_clean: ActivationSet,
    pub train_adversarial: ActivationSet,
    pub dev_clean: ActivationSet,
    pub test_clean: ActivationSet,
    pub test_adversarial: ActivationSet,
}

impl ProtocolSplit {
    pub fn new(clean: &ActivationSet, adversarial: &ActivationSet) -> Self {
        let n = clean.len();
        let train_end = n * 8 / 10;
        let dev_end = n * 9 / 10;
        let m = adversarial.len();
        ProtocolSplit {
            train_clean: clean.slice(0..train_end),
            dev_clean: clean.slice(train_end..dev_end),
            test_clean: clean.slice(dev_end..n),
            train_adversarial: adversarial.slice(0..m / 2),
            test_adversarial: adversarial.slice(m / 2..m),
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct TokenCode {
    terms: Vec<(usize, f64)>,
}

struct SampleCode {
    tokens: Vec<TokenCode>,
}

fn draw_structure(cfg: &SyntheticConfig) -> (Vec<SampleCode>, Vec<SampleCode>) {
    let mut rng = stream_rng(cfg.seed, STREAM_STRUCTURE);
    let coef = Uniform::new_inclusive(COEF_RANGE.0, COEF_RANGE.1).expect("valid range");
    let (lo, hi) = cfg.tokens_per_sample;
    let n_free = cfg.first_planted();

    let draw = |adversarial: bool, rng: &mut ChaCha8Rng| {
        let n_tokens = rng.random_range(lo..=hi);
        let subset: Vec<usize> = if adversarial && cfg.attack_atoms_per_sample > 0 {
            let mut s = sample_indices(rng, cfg.planted_attack_atoms, cfg.attack_atoms_per_sample)
                .into_vec();
            s.sort_unstable();
            s.into_iter().map(|i| n_free + i).collect()
        } else {
            Vec::new()
        };
        let tokens = (0..n_tokens)
            .map(|_| {
                let mut idx = sample_indices(rng, n_free, cfg.code_sparsity).into_vec();
                idx.sort_unstable();
                let mut terms: Vec<(usize, f64)> =
                    idx.into_iter().map(|i| (i, coef.sample(rng))).collect();
                for &p in &subset {
                    terms.push((p, cfg.attack_strength * coef.sample(rng)));
                }
                TokenCode { terms }
            })
            .collect();
        SampleCode { tokens }
    };

    let clean = (0..cfg.num_clean).map(|_| draw(false, &mut rng)).collect();
    let adversarial = (0..cfg.num_adversarial).map(|_| draw(true, &mut rng)).collect();
    (clean, adversarial)
}

fn layer_dictionary(cfg: &SyntheticConfig, layer: u64) -> Vec<Vec<f64>> {
    let mut clean_rng = stream_rng(cfg.seed, STREAM_CLEAN_ATOMS + layer);
    let mut planted_rng = stream_rng(cfg.planted_seed.unwrap_or(cfg.seed), STREAM_PLANTED_ATOMS + layer);
    let mut atoms: Vec<Vec<f64>> = (0..cfg.first_planted())
        .map(|_| unit_vector(&mut clean_rng, cfg.dim))
        .collect();
    atoms.extend((0..cfg.planted_attack_atoms).map(|_| unit_vector(&mut planted_rng, cfg.dim)));
    atoms
}

fn render(
    codes: &[SampleCode],
    atoms: &[Vec<f64>],
    noise: &mut impl FnMut() -> f64,
    dim: usize,
    prefix: &str,
    label: Label,
    layer_id: &str,
) -> Result<ActivationSet> {
    let width = codes.len().max(1).to_string().len().max(4);
    let samples = codes
        .iter()
        .enumerate()
        .map(|(n, code)| {
            let mut data = Vec::with_capacity(code.tokens.len() * dim);
            for tok in &code.tokens {
                let mut row = vec![0.0f64; dim];
                for &(atom, c) in &tok.terms {
                    for (r, a) in row.iter_mut().zip(&atoms[atom]) {
                        *r += c * a;
                    }
                }
                data.extend(row.into_iter().map(|r| (r + noise()) as f32));
            }
            SampleRecord::new(format!("{prefix}-{n:0width$}"), label, dim, data)
        })
        .collect::<Result<Vec<_>>>()?;
    ActivationSet::new(layer_id, dim, samples)
}

/// Generate aligned clean/adversarial sets for several capture locations.
///
/// All layers describe the same samples (same ids, token counts and latent
/// codes) seen through different dictionaries with independent noise.
pub fn generate_synthetic_layers(cfg: &SyntheticConfig, layer_ids: &[&str]) -> Result<Vec<SyntheticLayer>> {
    cfg.validate()?;
    if layer_ids.is_empty() {
        return Err(Error::InvalidInput("at least one layer id is required".into()));
    }
    let (clean_codes, adv_codes) = draw_structure(cfg);
    let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;

    layer_ids
        .iter()
        .enumerate()
        .map(|(l, layer_id)| {
            let atoms = layer_dictionary(cfg, l as u64);
            let mut noise_rng = stream_rng(cfg.seed, STREAM_NOISE + l as u64);
            let mut noise = || {
                if cfg.noise_sigma == 0.0 {
                    0.0
                } else {
                    normal.sample(&mut noise_rng)
                }
            };
            let clean = render(&clean_codes, &atoms, &mut noise, cfg.dim, "clean", Label::Clean, layer_id)?;
            let adversarial = render(
                &adv_codes,
                &atoms,
                &mut noise,
                cfg.dim,
                "adv",
                Label::Adversarial,
                layer_id,
            )?;
            Ok(SyntheticLayer {
                clean,
                adversarial,
                atoms,
                planted: (cfg.first_planted()..cfg.dictionary_size).collect(),
            })
        })
        .collect()
}

/// Single-layer generation; the layer id is `"synthetic"`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(ActivationSet, ActivationSet)> {
    let mut layers = generate_synthetic_layers(cfg, &["synthetic"])?;
    let layer = layers.pop().expect("one layer");
    Ok((layer.clean, layer.adversarial))
}
