//! First-order update rules. State is kept only for tensors that receive
//! first-order updates.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FoRule {
    #[default]
    Sgd,
    /// Adam moments with decoupled weight decay.
    AdamLike,
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct FoState {
    moments: Vec<Option<Moments>>,
    t: u64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl FoState {
    pub fn new(n_tensors: usize) -> Self {
        Self { moments: vec![None; n_tensors], t: 0 }
    }

    pub fn slots(&self) -> usize {
        self.moments.len()
    }

    /// Number of stored optimizer scalars.
    pub fn len(&self) -> usize {
        self.moments.iter().flatten().map(|m| m.m.len() + m.v.len()).sum()
    }

    /// Start a new optimizer step (advances the bias-correction counter).
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn apply(&mut self, rule: FoRule, k: usize, lr: f64, adam: AdamParams, w: &mut [f64], g: &[f64]) {
        match rule {
            FoRule::Sgd => {
                for (w, g) in w.iter_mut().zip(g) {
                    *w -= lr * g;
                }
            }
            FoRule::AdamLike => {
                let st = self.moments[k].get_or_insert_with(|| Moments { m: vec![0.0; w.len()], v: vec![0.0; w.len()] });
                let t = self.t.max(1) as i32;
                let c1 = 1.0 - adam.beta1.powi(t);
                let c2 = 1.0 - adam.beta2.powi(t);
                for i in 0..w.len() {
                    st.m[i] = adam.beta1 * st.m[i] + (1.0 - adam.beta1) * g[i];
                    st.v[i] = adam.beta2 * st.v[i] + (1.0 - adam.beta2) * g[i] * g[i];
                    let m_hat = st.m[i] / c1;
                    let v_hat = st.v[i] / c2;
                    w[i] -= lr * (m_hat / (v_hat.sqrt() + adam.eps) + adam.weight_decay * w[i]);
                }
            }
        }
    }
}
