use super::tensor::Tensor;
use crate::error::{MemsimError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        AdamState { m, v, step: 0 }
    }
}

pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(MemsimError::dim(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(MemsimError::dim(
                "adam_step",
                format!("param {:?}, grad {:?}, moment {:?}", p.shape(), g.shape(), m.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_on_fresh_state_leaves_weights() {
        let mut w = Tensor::vector(vec![0.3, -1.2]);
        let mut st = AdamState::new([&w]);
        adam_step(&mut [&mut w], &[Tensor::zeros(&[2])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(w.data(), &[0.3, -1.2]);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut w = Tensor::vector(vec![1.0]);
        let mut st = AdamState::new([&w]);
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut w], &[Tensor::vector(vec![2.0])], &mut st, &cfg).unwrap();
        let (m0, v0) = (st.m[0].data()[0], st.v[0].data()[0]);
        adam_step(&mut [&mut w], &[Tensor::vector(vec![0.0])], &mut st, &cfg).unwrap();
        assert!((st.m[0].data()[0] - 0.9 * m0).abs() < 1e-15);
        assert!((st.v[0].data()[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the first step is lr·g/(|g| + eps).
        let mut w = Tensor::vector(vec![0.0]);
        let mut st = AdamState::new([&w]);
        adam_step(&mut [&mut w], &[Tensor::vector(vec![1.0])], &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((w.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut w = Tensor::vector(vec![0.0, 1.0]);
        let mut st = AdamState::new([&w]);
        let r = adam_step(&mut [&mut w], &[Tensor::vector(vec![1.0])], &mut st, &AdamConfig::default());
        assert!(r.is_err());
    }
}
