use std::collections::BTreeMap;

use crate::diff::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: AdamConfig,
) {
    assert!(t >= 1, "adam step counter starts at 1");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        param[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam optimiser keyed by parameter name. Each named tensor keeps its own
/// step counter, so rarely-visited tensors (per-sample latents) get the same
/// bias correction as if they were optimised alone.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Update one named tensor.
    pub fn step_tensor(&mut self, key: &str, value: &mut Tensor, grad: &[f64], lr: f64) {
        let n = value.len();
        let st = self.state.entry(key.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        });
        st.t += 1;
        adam_update(value.data_mut(), grad, &mut st.m, &mut st.v, st.t, lr, self.cfg);
    }

    /// Update every parameter of a store from its gradient buffer.
    pub fn step(&mut self, prefix: &str, store: &mut ParamStore, lr: f64) {
        for (name, p) in store.iter_mut() {
            let key = format!("{prefix}{name}");
            let grad = p.grad.data().to_vec();
            self.step_tensor(&key, &mut p.value, &grad, lr);
        }
    }

    pub fn steps_taken(&self, key: &str) -> u64 {
        self.state.get(key).map_or(0, |s| s.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut p, &[0.0; 3], &mut m, &mut v, 1, 0.1, AdamConfig::default());
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        // t = 1: m̂ = g and v̂ = g², so Δ = −lr·g/(|g| + ε).
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        let lr = 1e-2;
        adam_update(&mut p, &g, &mut m, &mut v, 1, lr, AdamConfig::default());
        for (pi, gi) in p.iter().zip(g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi.abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = vec![0.3, 0.7];
            let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
            for t in 1..=5 {
                adam_update(&mut p, &[0.1, -0.2], &mut m, &mut v, t, 1e-3, AdamConfig::default());
            }
            p
        };
        assert_eq!(run(), run());
    }
}
