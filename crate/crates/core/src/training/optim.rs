use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::nn::ParamStore;

/// Adaptive moment estimation with decoupled weight decay.
///
/// Parameters without a gradient in a step are left untouched, weight decay
/// included, so frozen branches stay bit-identical.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    /// Number of updates taken per parameter, for bias correction.
    pub t: BTreeMap<String, u64>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: BTreeMap::new(),
        }
    }

    /// One update of every parameter accepted by `filter` that has a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64, filter: impl Fn(&str) -> bool) -> Result<()> {
        for (name, var) in params.iter() {
            if !filter(name) {
                continue;
            }
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients carry their backward graph; keep only the values
            let g = &g.detach();
            let p = &var.as_tensor().detach();
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let t = self.t.get(name).copied().unwrap_or(0) + 1;
            let m_hat = (&m / (1.0 - self.beta1.powi(t as i32)))?;
            let v_hat = (&v / (1.0 - self.beta2.powi(t as i32)))?;
            let update = m_hat.div(&(v_hat.sqrt()? + self.eps)?)?;
            let decayed = (p * (1.0 - lr * self.weight_decay))?;
            var.set(&(decayed - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
            self.t.insert(name.clone(), t);
        }
        Ok(())
    }
}
