// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{Gradients, Sae};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    w_enc: Moments,
    b_enc: Moments,
    atoms: Moments,
    b_dec: Moments,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &Sae<f32>) -> Self {
        Adam {
            cfg,
            t: 0,
            w_enc: Moments::new(model.w_enc.len()),
            b_enc: Moments::new(model.b_enc.len()),
            atoms: Moments::new(model.atoms.len()),
            b_dec: Moments::new(model.b_dec.len()),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, model: &mut Sae<f32>, grads: &Gradients<f32>) {
        self.t += 1;
        let b1 = self.cfg.beta1 as f32;
        let b2 = self.cfg.beta2 as f32;
        let eps = self.cfg.epsilon as f32;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t);
        // Folded bias correction: lr_t = lr * sqrt(bc2) / bc1.
        let lr_t = (self.cfg.learning_rate * bc2.sqrt() / bc1) as f32;
        let eps_t = eps * (bc2.sqrt() as f32);

        let update = |params: &mut [f32], g: &[f32], st: &mut Moments| {
            for (((p, &gi), m), v) in params.iter_mut().zip(g).zip(&mut st.m).zip(&mut st.v) {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *p -= lr_t * *m / (v.sqrt() + eps_t);
            }
        };
        update(&mut model.w_enc, &grads.w_enc, &mut self.w_enc);
        update(&mut model.b_enc, &grads.b_enc, &mut self.b_enc);
        update(&mut model.atoms, &grads.atoms, &mut self.atoms);
        update(&mut model.b_dec, &grads.b_dec, &mut self.b_dec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first Adam step is lr * sign(g) (up to eps).
        let mut model = Sae::<f32>::init(2, 2, 1, 0).unwrap();
        let before = model.clone();
        let mut g = Gradients::zeros(2, 2);
        g.b_dec = vec![0.3, -5.0];
        let mut adam = Adam::new(AdamConfig::default(), &model);
        adam.step(&mut model, &g);
        assert!((model.b_dec[0] - (before.b_dec[0] - 1e-3)).abs() < 1e-7);
        assert!((model.b_dec[1] - (before.b_dec[1] + 1e-3)).abs() < 1e-7);
        assert_eq!(model.w_enc, before.w_enc);
        assert_eq!(adam.steps_taken(), 1);
    }
}
