use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrads};
use crate::error::{numerical, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moment accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self { config, first: vec![0.0; n_params], second: vec![0.0; n_params], step: 0 }
    }

    pub fn for_mlp(config: AdamConfig, m: &Mlp) -> Self {
        Self::new(config, m.param_count())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update over parameter/gradient slices
    /// visited in a fixed order.
    fn update<'a>(&mut self, params: impl Iterator<Item = &'a mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        let total: usize = grads.iter().map(|g| g.len()).sum();
        if total != self.first.len() {
            return Err(shape(format!("{total} gradients for {} optimizer slots", self.first.len())));
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(numerical("non-finite gradient; optimizer step rejected"));
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut off = 0;
        for (p, g) in params.zip(grads.iter().copied()) {
            if p.len() != g.len() {
                return Err(shape("parameter and gradient slices differ"));
            }
            let m = &mut self.first[off..off + g.len()];
            let v = &mut self.second[off..off + g.len()];
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            off += g.len();
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.update(std::iter::once(params), &[grads])
    }

    /// Updates an MLP in place. Frozen MLPs are left untouched and the step
    /// counter does not advance.
    pub fn step_mlp(&mut self, m: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if m.frozen {
            return Ok(());
        }
        let slices: Vec<&[f64]> = grads.slices().collect();
        self.update(m.param_slices_mut(), &slices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(AdamConfig::default(), 2);
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn descends_on_quadratic() {
        let mut w = vec![1.0];
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, 1);
        let g = 2.0 * w[0];
        adam.step(&mut w, &[g]).unwrap();
        assert!(w[0].abs() < 1.0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = vec![1.0];
        let mut adam = Adam::new(AdamConfig::default(), 1);
        assert!(adam.step(&mut p, &[f64::NAN]).is_err());
        assert_eq!(p, vec![1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn frozen_mlp_untouched() {
        let mut m = Mlp::from_layers(vec![Dense::from_parts(vec![0.5], vec![0.1], 1, Activation::Tanh).unwrap()]).unwrap();
        m.frozen = true;
        let before = m.clone();
        let mut adam = Adam::for_mlp(AdamConfig::default(), &m);
        let (_, cache) = m.forward(&[1.0]).unwrap();
        let (grads, _) = m.backward(&cache, &[1.0]).unwrap();
        adam.step_mlp(&mut m, &grads).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.3, -0.7, 1.1];
            let mut adam = Adam::new(AdamConfig::default(), 3);
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + (k as f64).sin()).collect();
                adam.step(&mut p, &g).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
