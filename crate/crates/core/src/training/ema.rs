use std::collections::BTreeMap;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// `shadow <- decay * shadow + (1 - decay) * live`, elementwise per named tensor.
pub fn ema_update(shadow: &mut BTreeMap<String, Tensor>, live: &BTreeMap<String, Tensor>, decay: f64) -> Result<()> {
    if shadow.len() != live.len() || shadow.keys().zip(live.keys()).any(|(a, b)| a != b) {
        return Err(Error::validation("ema", "shadow and live parameter sets differ"));
    }
    for (name, s) in shadow.iter_mut() {
        let l = &live[name];
        if s.dims() != l.dims() {
            return Err(Error::shape(format!("ema shape mismatch for {name}")));
        }
        *s = ((&*s * decay)? + (l * (1.0 - decay))?)?;
    }
    Ok(())
}

/// Exponential moving average of a parameter store, used for evaluation snapshots.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub shadow: BTreeMap<String, Tensor>,
}

impl Ema {
    pub fn new(params: &ParamStore, decay: f64) -> Result<Self> {
        Ok(Self {
            decay,
            shadow: params.snapshot()?,
        })
    }

    pub fn update(&mut self, params: &ParamStore) -> Result<()> {
        ema_update(&mut self.shadow, &params.snapshot()?, self.decay)
    }
}
