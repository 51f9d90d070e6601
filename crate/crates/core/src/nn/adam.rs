use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having a zero gradient.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    for (name, g) in grads.iter() {
        match params.params.get(name) {
            None => return Err(Error::ShapeMismatch(format!("gradient for unknown parameter {name}"))),
            Some(p) if p.value.shape() != g.shape() => {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: parameter {:?}, gradient {:?}",
                    p.value.shape(),
                    g.shape()
                )))
            }
            _ => {}
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.params.iter_mut() {
        let g = grads.get(name);
        let value = p.value.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..value.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::from_vec(&[1], vec![x]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(1.5);
        let mut g = Gradients::new();
        g.accumulate("x", &Tensor::from_vec(&[1], vec![0.0]).unwrap()).unwrap();
        adam_step(&mut p, &g, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = scalar_store(1.0);
        let mut g = Gradients::new();
        g.accumulate("x", &Tensor::from_vec(&[1], vec![2.0]).unwrap()).unwrap();
        adam_step(&mut p, &g, &cfg).unwrap();
        // m = 0.2, v = 0.004; m_hat = 2, v_hat = 4; x -= 0.1 * 2 / (2 + 1e-8)
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p.get("x").unwrap().data()[0] - expected).abs() < 1e-15);
        // Second step, same gradient: hand-expanded moments.
        adam_step(&mut p, &g, &cfg).unwrap();
        let m = 0.9 * 0.2 + 0.1 * 2.0;
        let v = 0.999 * 0.004 + 0.001 * 4.0;
        let step2 = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p.get("x").unwrap().data()[0] - (expected - step2)).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = scalar_store(0.3);
            for k in 0..50 {
                let mut g = Gradients::new();
                g.accumulate("x", &Tensor::from_vec(&[1], vec![(k as f64).sin()]).unwrap()).unwrap();
                adam_step(&mut p, &g, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = scalar_store(0.0);
        let mut g = Gradients::new();
        g.accumulate("x", &Tensor::zeros(&[2])).unwrap();
        assert!(matches!(adam_step(&mut p, &g, &AdamConfig::default()), Err(Error::ShapeMismatch(_))));
    }
}
