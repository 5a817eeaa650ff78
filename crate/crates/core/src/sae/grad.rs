// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analytic gradients of the reconstruction loss.
//!
//! The top-k support is treated as fixed at the evaluation point
//! (straight-through on the mask), so only selected latents receive
//! encoder gradient.

use super::{Real, Sae};
use crate::error::{Error, Result};

/// Parameter gradients, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    d_model: usize,
    d_sae: usize,
    pub(crate) w_enc: Vec<T>,
    pub(crate) b_enc: Vec<T>,
    /// Atom-major, like the model's decoder storage.
    pub(crate) atoms: Vec<T>,
    pub(crate) b_dec: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(d_model: usize, d_sae: usize) -> Self {
        Gradients {
            d_model,
            d_sae,
            w_enc: vec![T::zero(); d_sae * d_model],
            b_enc: vec![T::zero(); d_sae],
            atoms: vec![T::zero(); d_sae * d_model],
            b_dec: vec![T::zero(); d_model],
        }
    }

    pub(crate) fn clear(&mut self) {
        for buf in [&mut self.w_enc, &mut self.b_enc, &mut self.atoms, &mut self.b_dec] {
            buf.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `∂L/∂W_enc[i, c]`.
    pub fn w_enc_at(&self, i: usize, c: usize) -> T {
        self.w_enc[i * self.d_model + c]
    }

    /// `∂L/∂W_dec[r, j]` in the `d_model x d_sae` layout.
    pub fn w_dec_at(&self, r: usize, j: usize) -> T {
        self.atoms[j * self.d_model + r]
    }

    pub fn b_enc(&self) -> &[T] {
        &self.b_enc
    }

    pub fn b_dec(&self) -> &[T] {
        &self.b_dec
    }

    pub fn d_sae(&self) -> usize {
        self.d_sae
    }
}

impl<T: Real> Sae<T> {
    /// Batch loss (mean of `‖x − x̂‖² / d_model`) and its gradient.
    pub fn loss_and_grad<X: AsRef<[T]>>(&self, batch: &[X]) -> Result<(f64, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for x in batch {
            self.check_input(x.as_ref())?;
        }
        let mut grads = Gradients::zeros(self.d_model, self.d_sae);
        let loss = self.accumulate_grad(batch.iter().map(|x| x.as_ref()), batch.len(), &mut grads);
        Ok((loss, grads))
    }

    /// Add the gradient of the batch-mean loss into `grads`, visiting inputs
    /// in iterator order. Returns the batch loss.
    pub(crate) fn accumulate_grad<'a, I>(&self, batch: I, batch_len: usize, grads: &mut Gradients<T>) -> f64
    where
        I: Iterator<Item = &'a [T]>,
    {
        let d = self.d_model;
        let scale = T::from_f64(2.0 / (batch_len as f64 * d as f64)).expect("finite scale");
        let mut total = 0.0f64;
        let mut centered = vec![T::zero(); d];
        let mut g = vec![T::zero(); d];

        for x in batch {
            for ((c, &xi), &b) in centered.iter_mut().zip(x).zip(&self.b_dec) {
                *c = xi - b;
            }
            let code = super::top_k_positive(&self.pre_from_centered(&centered), self.k);
            let recon = self.decode_unchecked(&code);

            let mut sq = 0.0f64;
            for ((gi, &ri), &xi) in g.iter_mut().zip(&recon).zip(x) {
                let r = ri - xi;
                sq += r.to_f64().unwrap_or(f64::NAN).powi(2);
                *gi = r * scale;
            }
            total += sq / d as f64;

            for (gb, &gi) in grads.b_dec.iter_mut().zip(&g) {
                *gb = *gb + gi;
            }
            for (j, cj) in code.iter() {
                let atom = self.decoder_column(j);
                let dc = atom.iter().zip(&g).fold(T::zero(), |acc, (&a, &gi)| acc + a * gi);

                for (ga, &gi) in grads.atoms[j * d..(j + 1) * d].iter_mut().zip(&g) {
                    *ga = *ga + cj * gi;
                }
                grads.b_enc[j] = grads.b_enc[j] + dc;
                for (gw, &c) in grads.w_enc[j * d..(j + 1) * d].iter_mut().zip(&centered) {
                    *gw = *gw + dc * c;
                }
                // b_dec also enters through the centered encoder input.
                for (gb, &w) in grads.b_dec.iter_mut().zip(self.encoder_row(j)) {
                    *gb = *gb - dc * w;
                }
            }
        }
        total / batch_len as f64
    }
}
