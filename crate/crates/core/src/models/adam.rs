use serde::{Deserialize, Serialize};

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self::with_lr(n_params, 1e-3)
    }

    pub fn with_lr(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One Adam step in place.
///
/// # Panics
/// If `params`, `grads` and the state accumulators differ in length.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter/gradient length mismatch"
    );
    assert_eq!(
        params.len(),
        state.m.len(),
        "parameter/state length mismatch"
    );
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_update(&mut p, &[0.0, 0.0], &mut s);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        s.m = vec![0.5];
        s.v = vec![0.25];
        adam_update(&mut p, &[0.0], &mut s);
        assert_eq!(s.m, vec![0.9 * 0.5]);
        assert_eq!(s.v, vec![0.999 * 0.25]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.7, -42.0] {
            let mut p = vec![0.0];
            let mut s = AdamState::new(1);
            adam_update(&mut p, &[g], &mut s);
            assert!((p[0].abs() - 1e-3).abs() < 1e-8, "{g}: {}", p[0]);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn matches_scalar_reference() {
        let grads = [0.3, -1.2, 0.8, 0.05, -0.4, 2.0, -0.7, 0.1, 0.0, -0.9];
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (0.5_f64, 0.0_f64, 0.0_f64);
        let mut p = vec![0.5];
        let mut s = AdamState::new(1);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powf(t))) / ((v / (1.0 - b2.powf(t))).sqrt() + eps);
            adam_update(&mut p, &[*g], &mut s);
            assert!((p[0] - x).abs() < 1e-12);
        }
    }
}
