use serde::{Deserialize, Serialize};

use super::network::{Gradients, NetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: NetworkParams,
    second_moment: NetworkParams,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: NetworkParams::zeros(),
            second_moment: NetworkParams::zeros(),
        }
    }

    pub fn first_moment(&self) -> &NetworkParams {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &NetworkParams {
        &self.second_moment
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) {
        return Err(Error::ShapeMismatch("parameters, gradients and moments differ in shape".into()));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    let blocks = params
        .slices_mut()
        .zip(grads.slices())
        .zip(state.first_moment.slices_mut())
        .zip(state.second_moment.slices_mut());
    for (((p, g), m), v) in blocks {
        for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::network::init_network;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = init_network(1);
        let before = p.clone();
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &NetworkParams::zeros(), &mut state).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = init_network(1);
        let mut g = NetworkParams::zeros();
        g.layers_mut()[0].weights[0] = 2.0;
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &g, &mut state).unwrap();
        let m0 = state.first_moment().layers()[0].weights[0];
        let v0 = state.second_moment().layers()[0].weights[0];
        adam_step(&mut p, &NetworkParams::zeros(), &mut state).unwrap();
        assert!((state.first_moment().layers()[0].weights[0] - 0.9 * m0).abs() < 1e-15);
        assert!((state.second_moment().layers()[0].weights[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut p = NetworkParams::zeros();
        let mut g = NetworkParams::zeros();
        g.layers_mut()[2].weights[7] = 0.37;
        g.layers_mut()[1].bias[3] = -250.0;
        let mut state = AdamState::new(AdamConfig::default());
        let mut last = (0.0, 0.0);
        for _ in 0..500 {
            let before = (p.layers()[2].weights[7], p.layers()[1].bias[3]);
            adam_step(&mut p, &g, &mut state).unwrap();
            last = (before.0 - p.layers()[2].weights[7], before.1 - p.layers()[1].bias[3]);
        }
        assert!((last.0 - 1e-3).abs() < 1e-9, "{}", last.0);
        assert!((last.1 + 1e-3).abs() < 1e-9, "{}", last.1);
    }

    #[test]
    fn identical_states_give_identical_results() {
        let g = init_network(9);
        let (mut p1, mut p2) = (init_network(3), init_network(3));
        let (mut s1, mut s2) = (AdamState::new(AdamConfig::default()), AdamState::new(AdamConfig::default()));
        for _ in 0..3 {
            adam_step(&mut p1, &g, &mut s1).unwrap();
            adam_step(&mut p2, &g, &mut s2).unwrap();
        }
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }
}
