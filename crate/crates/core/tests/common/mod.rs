// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference implementations written independently of the library, used as
//! oracles by the integration and acceptance tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saegis::sae::Sae;

/// Plain-array copy of an SAE's parameters in the mathematical layout.
#[derive(Debug, Clone)]
pub struct Params {
    pub d_model: usize,
    pub d_sae: usize,
    pub k: usize,
    /// `d_sae x d_model`
    pub w_enc: Vec<Vec<f64>>,
    pub b_enc: Vec<f64>,
    /// `d_model x d_sae`
    pub w_dec: Vec<Vec<f64>>,
    pub b_dec: Vec<f64>,
}

impl Params {
    pub fn of(m: &Sae<f64>) -> Self {
        let (dm, ds) = (m.d_model(), m.d_sae());
        let wd = m.w_dec();
        Params {
            d_model: dm,
            d_sae: ds,
            k: m.k(),
            w_enc: (0..ds).map(|i| m.encoder_row(i).to_vec()).collect(),
            b_enc: m.b_enc().to_vec(),
            w_dec: (0..dm).map(|r| wd[r * ds..(r + 1) * ds].to_vec()).collect(),
            b_dec: m.b_dec().to_vec(),
        }
    }

    pub fn random(d_model: usize, d_sae: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut g = |s: f64| rng.random_range(-s..s);
        Params {
            d_model,
            d_sae,
            k,
            w_enc: (0..d_sae).map(|_| (0..d_model).map(|_| g(1.0)).collect()).collect(),
            b_enc: (0..d_sae).map(|_| g(0.3)).collect(),
            w_dec: (0..d_model).map(|_| (0..d_sae).map(|_| g(1.0)).collect()).collect(),
            b_dec: (0..d_model).map(|_| g(0.3)).collect(),
        }
    }

    pub fn to_model(&self) -> Sae<f64> {
        let flat = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().collect::<Vec<_>>();
        Sae::from_parts(
            self.d_model,
            self.d_sae,
            self.k,
            flat(&self.w_enc),
            self.b_enc.clone(),
            flat(&self.w_dec),
            self.b_dec.clone(),
        )
        .unwrap()
    }

    pub fn pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d_sae)
            .map(|i| {
                let mut s = self.b_enc[i];
                for c in 0..self.d_model {
                    s += self.w_enc[i][c] * (x[c] - self.b_dec[c]);
                }
                s
            })
            .collect()
    }

    /// Top-k by full sort: value descending, index ascending; keep positives.
    pub fn support(&self, x: &[f64]) -> Vec<usize> {
        let pre = self.pre(x);
        let mut order: Vec<usize> = (0..self.d_sae).collect();
        order.sort_by(|&a, &b| pre[b].partial_cmp(&pre[a]).unwrap().then(a.cmp(&b)));
        let mut s: Vec<usize> = order.into_iter().take(self.k).filter(|&i| pre[i] > 0.0).collect();
        s.sort();
        s
    }

    /// Reconstruction with a given support (no top-k re-selection).
    pub fn recon_with(&self, x: &[f64], support: &[usize]) -> Vec<f64> {
        let pre = self.pre(x);
        (0..self.d_model)
            .map(|r| {
                let mut v = self.b_dec[r];
                for &j in support {
                    v += self.w_dec[r][j] * pre[j].max(0.0);
                }
                v
            })
            .collect()
    }

    /// Batch loss `mean ‖x − x̂‖² / d_model` with per-sample supports held fixed.
    pub fn loss_fixed(&self, batch: &[Vec<f64>], supports: &[Vec<usize>]) -> f64 {
        let mut total = 0.0;
        for (x, s) in batch.iter().zip(supports) {
            let r = self.recon_with(x, s);
            total += x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.d_model as f64;
        }
        total / batch.len() as f64
    }

    pub fn loss(&self, batch: &[Vec<f64>]) -> f64 {
        let supports: Vec<Vec<usize>> = batch.iter().map(|x| self.support(x)).collect();
        self.loss_fixed(batch, &supports)
    }

    /// Flat parameter vector in the order W_enc, b_enc, W_dec, b_dec.
    pub fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w_enc.iter().flatten().copied().collect();
        v.extend(&self.b_enc);
        v.extend(self.w_dec.iter().flatten());
        v.extend(&self.b_dec);
        v
    }

    pub fn with_flat(&self, v: &[f64]) -> Params {
        let mut p = self.clone();
        let mut it = v.iter().copied();
        for row in p.w_enc.iter_mut() {
            row.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        p.b_enc.iter_mut().for_each(|x| *x = it.next().unwrap());
        for row in p.w_dec.iter_mut() {
            row.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        p.b_dec.iter_mut().for_each(|x| *x = it.next().unwrap());
        p
    }

    /// Central finite-difference gradient of [`Params::loss_fixed`].
    pub fn fd_grad(&self, batch: &[Vec<f64>], supports: &[Vec<usize>], h: f64) -> Vec<f64> {
        let base = self.flat();
        (0..base.len())
            .map(|i| {
                let mut up = base.clone();
                up[i] += h;
                let mut dn = base.clone();
                dn[i] -= h;
                (self.with_flat(&up).loss_fixed(batch, supports) - self.with_flat(&dn).loss_fixed(batch, supports))
                    / (2.0 * h)
            })
            .collect()
    }
}

/// Flatten library gradients in the [`Params::flat`] order.
pub fn flat_grad(g: &saegis::sae::Gradients<f64>, d_model: usize, d_sae: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for i in 0..d_sae {
        for c in 0..d_model {
            v.push(g.w_enc_at(i, c));
        }
    }
    v.extend(g.b_enc());
    for r in 0..d_model {
        for j in 0..d_sae {
            v.push(g.w_dec_at(r, j));
        }
    }
    v.extend(g.b_dec());
    v
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    diff / scale
}

/// Sort-and-index quantile: the value at 1-based rank ⌈(1−α)n⌉, rank ≥ 1.
/// The rank is computed in exact rational arithmetic on α given as `num/den`.
pub fn quantile_oracle(values: &[f64], alpha_num: u64, alpha_den: u64) -> f64 {
    let n = values.len() as u64;
    let numer = (alpha_den - alpha_num) * n;
    let rank = numer.div_ceil(alpha_den).max(1);
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s[(rank - 1) as usize]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
