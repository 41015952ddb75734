use serde::{Deserialize, Serialize};

use super::{NeuralError, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied to the parameters before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState) -> Result<(), NeuralError> {
    let shapes_ok = grads.len() == params.len()
        && state.m.len() == params.len()
        && params
            .tensors()
            .iter()
            .zip(grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(NeuralError::ShapeMismatch("gradients do not match parameters".into()));
    }
    let c = state.config;
    if !(c.lr >= 0.0) {
        return Err(NeuralError::InvalidArgument(format!("learning rate {}", c.lr)));
    }
    state.step += 1;
    let t = state.step as i32;
    let correct1 = 1.0 - c.beta1.powi(t);
    let correct2 = 1.0 - c.beta2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..g.len() {
            let w = &mut p.data_mut()[i];
            *w -= c.lr * c.weight_decay * *w;
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::row(values));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = store(&[1.0, -1.0, 0.5]);
        let config = AdamConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(config, &params);
        let grads = vec![vec![0.3, -2.0, 0.1]];
        adam_step(&mut params, &grads, &mut state).unwrap();
        let before = [1.0, -1.0, 0.5];
        for ((after, b), g) in params.tensors()[0].data().iter().zip(before).zip(&grads[0]) {
            let delta = after - b;
            assert_eq!(delta.signum(), -g.signum());
            assert!(delta.abs() <= 0.01 && delta.abs() >= 0.01 * (1.0 - 10.0 * 1e-8));
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut params = store(&[1.0, 2.0]);
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(config, &params);
        adam_step(&mut params, &[vec![0.0, 0.0]], &mut state).unwrap();
        assert_eq!(params.tensors()[0].data(), &[1.0, 2.0]);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        // Reference arithmetic written out step by step.
        let (lr, wd, b1, b2, eps) = (0.1, 0.01, 0.9, 0.999, 1e-8);
        let mut p = [0.5f64, -0.25];
        let g = [[0.2f64, -0.4], [0.1, 0.3]];
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        for (step, gs) in g.iter().enumerate() {
            let t = (step + 1) as i32;
            for i in 0..2 {
                p[i] -= lr * wd * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gs[i];
                v[i] = b2 * v[i] + (1.0 - b2) * gs[i] * gs[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        let mut params = store(&[0.5, -0.25]);
        let config = AdamConfig {
            lr,
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: wd,
        };
        let mut state = AdamState::new(config, &params);
        for gs in g {
            adam_step(&mut params, &[gs.to_vec()], &mut state).unwrap();
        }
        assert_eq!(params.tensors()[0].data(), &p);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn shape_mismatch() {
        let mut params = store(&[1.0]);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        assert!(adam_step(&mut params, &[vec![0.0, 1.0]], &mut state).is_err());
    }
}
