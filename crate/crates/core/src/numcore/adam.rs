use serde::{Deserialize, Serialize};

use super::tensor::ParamStore;
use super::NumError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for every parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, st: &mut AdamState) -> Result<(), NumError> {
    if !params.same_layout(grads) || !params.same_layout(&st.m) {
        return Err(NumError::NameMismatch);
    }
    st.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = st.config;
    let bc1 = 1.0 - beta1.powi(st.t as i32);
    let bc2 = 1.0 - beta2.powi(st.t as i32);
    let moments = st.m.iter_mut().zip(st.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let p = p.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
            v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
