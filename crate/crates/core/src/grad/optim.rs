use serde::{Deserialize, Serialize};

use super::{Matrix, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            weight_decay: 0.01,
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One decoupled-weight-decay Adam step over every parameter.
///
/// ```text
/// p ← p·(1 − lr·wd)
/// m ← β1 m + (1 − β1) g
/// v ← β2 v + (1 − β2) g²
/// p ← p − lr · m̂ / (√v̂ + ε)
/// ```
pub fn adamw_step(params: &mut [Matrix], grads: &[Matrix], state: &mut OptimizerState) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "gradient shape");
        update(p, g, &mut state.m[i], &mut state.v[i], c, bc1, bc2);
    }
}

fn update(p: &mut Matrix, g: &Matrix, m: &mut Matrix, v: &mut Matrix, c: AdamWConfig, bc1: f64, bc2: f64) {
    let decay = 1.0 - c.lr * c.weight_decay;
    let pd = p.data_mut();
    let (md, vd) = (m.data_mut(), v.data_mut());
    for j in 0..pd.len() {
        let gj = g.data()[j];
        pd[j] *= decay;
        md[j] = c.beta1 * md[j] + (1.0 - c.beta1) * gj;
        vd[j] = c.beta2 * vd[j] + (1.0 - c.beta2) * gj * gj;
        let mhat = md[j] / bc1;
        let vhat = vd[j] / bc2;
        pd[j] -= c.lr * mhat / (vhat.sqrt() + c.eps);
    }
}

/// AdamW bound to a [`ParamStore`]. Parameters with no gradient in a step
/// are left untouched, weight decay included.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub state: OptimizerState,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        Self {
            state: OptimizerState::new(config, store.values()),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Matrix>]) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        let s = &mut self.state;
        s.step += 1;
        let c = s.config;
        let bc1 = 1.0 - c.beta1.powi(s.step as i32);
        let bc2 = 1.0 - c.beta2.powi(s.step as i32);
        for (i, p) in store.values_mut().iter_mut().enumerate() {
            if let Some(g) = &grads[i] {
                update(p, g, &mut s.m[i], &mut s.v[i], c, bc1, bc2);
            }
        }
    }
}
