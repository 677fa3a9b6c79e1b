use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

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
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.eps.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid Adam parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam step. Returns the new state and the additive update
/// `-lr * m_hat / (sqrt(v_hat) + eps)`, shaped like `grad`.
pub fn adam_step(state: &AdamState, grad: &Tensor, cfg: &AdamConfig) -> Result<(AdamState, Tensor)> {
    if grad.len() != state.m.len() {
        return Err(Error::arg(format!(
            "gradient has {} entries, Adam state has {}",
            grad.len(),
            state.m.len()
        )));
    }
    // Tensor construction already rejects non-finite values; keep the check for raw callers.
    if grad.data().iter().any(|g| !g.is_finite()) {
        return Err(Error::arg("non-finite gradient passed to Adam"));
    }
    let t = state.t + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut m = Vec::with_capacity(grad.len());
    let mut v = Vec::with_capacity(grad.len());
    let mut update = Vec::with_capacity(grad.len());
    for ((&g, &m0), &v0) in grad.data().iter().zip(&state.m).zip(&state.v) {
        let mi = cfg.beta1 * m0 + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v0 + (1.0 - cfg.beta2) * g * g;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        update.push(-cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
        m.push(mi);
        v.push(vi);
    }
    Ok((AdamState { m, v, t }, grad.with_data(update)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let (state, update) = adam_step(&AdamState::new(3), &Tensor::zeros(&[3]), &AdamConfig::default()).unwrap();
        assert_eq!(state.t, 1);
        assert!(update.data().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        for g in [0.37, -2.5, 1e-3] {
            let (_, u) = adam_step(&AdamState::new(1), &scalar(g), &cfg).unwrap();
            // m_hat = g, v_hat = g^2
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((u.data()[0] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_steps_hand_unrolled() {
        let cfg = AdamConfig::default();
        let (g1, g2) = (0.8, -0.3);
        let (s1, _) = adam_step(&AdamState::new(1), &scalar(g1), &cfg).unwrap();
        let (s2, u2) = adam_step(&s1, &scalar(g2), &cfg).unwrap();
        let m2 = 0.9 * (0.1 * g1) + 0.1 * g2;
        let v2 = 0.99 * (0.01 * g1 * g1) + 0.01 * g2 * g2;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.9801);
        let expected = -0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert_eq!(s2.t, 2);
        assert!((s2.m[0] - m2).abs() <= 1e-12);
        assert!((s2.v[0] - v2).abs() <= 1e-12);
        assert!((u2.data()[0] - expected).abs() <= 1e-12);
    }

    #[test]
    fn shape_mismatch_and_bad_config() {
        assert!(adam_step(&AdamState::new(2), &scalar(1.0), &AdamConfig::default()).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
