// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rectified top-k sparse autoencoder.
//!
//! `encode(x) = TopK(ReLU(W_enc (x - b_dec) + b_enc))`,
//! `decode(c) = W_dec c + b_dec`, trained on plain MSE. Sparsity is
//! structural, so there is no auxiliary penalty term.
//!
//! The model is generic over the scalar so that gradients can be checked
//! in `f64`; everything that touches disk or the detector uses
//! [`SaeModel`] (`f32`).

mod grad;
mod io;
mod optim;
mod train;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use grad::Gradients;
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use optim::{Adam, AdamConfig};
pub use train::{train, train_with_observer, TrainConfig, TrainReport};

/// Scalar types the autoencoder can be instantiated with.
pub trait Real: Float + FromPrimitive + ToPrimitive + Sum + Debug + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

/// Sparse autoencoder parameters.
///
/// Decoder atoms are kept atom-major internally (`d_sae` rows of length
/// `d_model`); [`Sae::w_dec_at`] and the file format use the mathematical
/// `d_model x d_sae` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sae<T = f32> {
    d_model: usize,
    d_sae: usize,
    k: usize,
    w_enc: Vec<T>,
    b_enc: Vec<T>,
    atoms: Vec<T>,
    b_dec: Vec<T>,
}

pub type SaeModel = Sae<f32>;

/// Top-k code: strictly increasing indices with strictly positive values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<T = f32> {
    pub d_sae: usize,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> SparseCode<T> {
    pub fn empty(d_sae: usize) -> Self {
        SparseCode {
            d_sae,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Activation of latent `i`; zero when absent.
    pub fn get(&self, i: usize) -> T {
        match self.indices.binary_search(&i) {
            Ok(p) => self.values[p],
            Err(_) => T::zero(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.d_sae];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    fn validate(&self, d_sae: usize, k: usize) -> Result<()> {
        if self.d_sae != d_sae {
            return Err(Error::Dimension(format!(
                "code has d_sae {} but model has {d_sae}",
                self.d_sae
            )));
        }
        if self.indices.len() != self.values.len() || self.indices.len() > k {
            return Err(Error::InvalidInput("malformed sparse code".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) || self.indices.iter().any(|&i| i >= d_sae) {
            return Err(Error::InvalidInput("sparse code indices must be increasing and < d_sae".into()));
        }
        Ok(())
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T: Real> Sae<T> {
    /// Assemble a model from parameters in the mathematical layout:
    /// `w_enc` is `d_sae x d_model` and `w_dec` is `d_model x d_sae`, both row-major.
    pub fn from_parts(
        d_model: usize,
        d_sae: usize,
        k: usize,
        w_enc: Vec<T>,
        b_enc: Vec<T>,
        w_dec: Vec<T>,
        b_dec: Vec<T>,
    ) -> Result<Self> {
        if d_model == 0 || d_sae == 0 {
            return Err(Error::InvalidInput("d_model and d_sae must be positive".into()));
        }
        if k == 0 || k > d_sae {
            return Err(Error::InvalidInput(format!("k must satisfy 1 <= k <= d_sae ({d_sae}), got {k}")));
        }
        let check = |name: &str, v: &[T], want: usize| {
            if v.len() != want {
                return Err(Error::Dimension(format!("{name} has {} values, expected {want}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name.to_string()));
            }
            Ok(())
        };
        check("W_enc", &w_enc, d_sae * d_model)?;
        check("b_enc", &b_enc, d_sae)?;
        check("W_dec", &w_dec, d_model * d_sae)?;
        check("b_dec", &b_dec, d_model)?;
        let mut atoms = vec![T::zero(); d_sae * d_model];
        for r in 0..d_model {
            for j in 0..d_sae {
                atoms[j * d_model + r] = w_dec[r * d_sae + j];
            }
        }
        Ok(Sae {
            d_model,
            d_sae,
            k,
            w_enc,
            b_enc,
            atoms,
            b_dec,
        })
    }

    /// Random unit-norm decoder atoms, tied encoder (`W_enc = W_decᵀ`), zero biases.
    pub fn init(d_model: usize, d_sae: usize, k: usize, seed: u64) -> Result<Self> {
        if d_model == 0 || d_sae == 0 || k == 0 || k > d_sae {
            return Err(Error::InvalidInput(format!(
                "invalid shape d_model={d_model} d_sae={d_sae} k={k}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut atoms = Vec::with_capacity(d_sae * d_model);
        for _ in 0..d_sae {
            let v: Vec<f64> = (0..d_model).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            atoms.extend(v.iter().map(|x| T::from_f64(x / norm).expect("finite")));
        }
        Ok(Sae {
            d_model,
            d_sae,
            k,
            w_enc: atoms.clone(),
            b_enc: vec![T::zero(); d_sae],
            atoms,
            b_dec: vec![T::zero(); d_model],
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn d_sae(&self) -> usize {
        self.d_sae
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Encoder row `i` (length `d_model`).
    pub fn encoder_row(&self, i: usize) -> &[T] {
        &self.w_enc[i * self.d_model..(i + 1) * self.d_model]
    }

    /// Decoder column `j`, i.e. the dictionary atom of latent `j`.
    pub fn decoder_column(&self, j: usize) -> &[T] {
        &self.atoms[j * self.d_model..(j + 1) * self.d_model]
    }

    /// `W_dec[r, j]` in the `d_model x d_sae` layout.
    pub fn w_dec_at(&self, r: usize, j: usize) -> T {
        self.atoms[j * self.d_model + r]
    }

    pub fn w_enc(&self) -> &[T] {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[T] {
        &self.b_enc
    }

    pub fn b_dec(&self) -> &[T] {
        &self.b_dec
    }

    /// `W_dec` flattened in the `d_model x d_sae` row-major layout.
    pub fn w_dec(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.d_model * self.d_sae];
        for j in 0..self.d_sae {
            for (r, &v) in self.decoder_column(j).iter().enumerate() {
                out[r * self.d_sae + j] = v;
            }
        }
        out
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.d_model {
            return Err(Error::Dimension(format!(
                "input has length {} but d_model is {}",
                x.len(),
                self.d_model
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input".into()));
        }
        Ok(())
    }

    /// Pre-activations `W_enc (x - b_dec) + b_enc`, before rectification.
    pub fn pre_activations(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let centered: Vec<T> = x.iter().zip(&self.b_dec).map(|(&a, &b)| a - b).collect();
        Ok(self.pre_from_centered(&centered))
    }

    fn pre_from_centered(&self, centered: &[T]) -> Vec<T> {
        self.w_enc
            .chunks_exact(self.d_model)
            .zip(&self.b_enc)
            .map(|(row, &b)| dot(row, centered) + b)
            .collect()
    }

    pub fn encode(&self, x: &[T]) -> Result<SparseCode<T>> {
        self.check_input(x)?;
        Ok(self.encode_unchecked(x))
    }

    pub(crate) fn encode_unchecked(&self, x: &[T]) -> SparseCode<T> {
        let centered: Vec<T> = x.iter().zip(&self.b_dec).map(|(&a, &b)| a - b).collect();
        top_k_positive(&self.pre_from_centered(&centered), self.k)
    }

    pub fn decode(&self, code: &SparseCode<T>) -> Result<Vec<T>> {
        code.validate(self.d_sae, self.k.max(code.len()))?;
        Ok(self.decode_unchecked(code))
    }

    pub(crate) fn decode_unchecked(&self, code: &SparseCode<T>) -> Vec<T> {
        let mut out = self.b_dec.clone();
        for (j, v) in code.iter() {
            for (o, &a) in out.iter_mut().zip(self.decoder_column(j)) {
                *o = *o + v * a;
            }
        }
        out
    }

    /// Squared reconstruction error of one input divided by `d_model`, in `f64`.
    pub fn sample_error(&self, x: &[T]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.sample_error_unchecked(x))
    }

    pub(crate) fn sample_error_unchecked(&self, x: &[T]) -> f64 {
        let recon = self.decode_unchecked(&self.encode_unchecked(x));
        let sq: f64 = x
            .iter()
            .zip(&recon)
            .map(|(&a, &b)| {
                let d = (a - b).to_f64().unwrap_or(f64::NAN);
                d * d
            })
            .sum();
        sq / self.d_model as f64
    }

    /// Mean over the batch of `‖x − decode(encode(x))‖² / d_model`.
    pub fn reconstruction_loss<X: AsRef<[T]>>(&self, batch: &[X]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut total = 0.0;
        for x in batch {
            total += self.sample_error(x.as_ref())?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Rescale every decoder atom to unit L2 norm.
    pub fn normalize_decoder(&mut self) {
        let d = self.d_model;
        for atom in self.atoms.chunks_exact_mut(d) {
            let norm = atom.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
            if norm > T::epsilon() {
                for v in atom.iter_mut() {
                    *v = *v / norm;
                }
            }
        }
    }

    /// Largest deviation of any decoder-column norm from 1.
    pub fn max_decoder_norm_deviation(&self) -> f64 {
        self.atoms
            .chunks_exact(self.d_model)
            .map(|a| {
                let n: f64 = a.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
                (n - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_enc, &self.b_enc, &self.atoms, &self.b_dec]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Keep the `k` largest strictly positive entries; ties go to the lower index.
pub fn top_k_positive<T: Real>(pre: &[T], k: usize) -> SparseCode<T> {
    let mut cand: Vec<(usize, T)> = pre
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, v)| v > T::zero())
        .collect();
    // Total order: value descending, then index ascending.
    let order = |a: &(usize, T), b: &(usize, T)| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by_key(|&(i, _)| i);
    SparseCode {
        d_sae: pre.len(),
        indices: cand.iter().map(|&(i, _)| i).collect(),
        values: cand.iter().map(|&(_, v)| v).collect(),
    }
}
