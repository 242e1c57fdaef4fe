//! Parameter storage and the small set of layers the tokenizer is built from.
//!
//! Layers are composed from primitive tensor ops only, so every gradient is
//! produced by candle's reverse-mode pass over elementary operations.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Named trainable tensors, iterated in lexicographic name order.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    /// Registration hands out graph-free views of existing variables.
    view: bool,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("len", &self.vars.len())
            .field("dtype", &self.dtype)
            .field("view", &self.view)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            view: false,
        }
    }

    /// A store over the same variables whose registrations return detached
    /// views instead of creating parameters. Modules built from it share the
    /// weights, see every update, and record no autograd graph.
    pub fn detached_view(&self) -> Self {
        Self {
            vars: self.vars.clone(),
            dtype: self.dtype,
            device: self.device.clone(),
            rng: ChaCha8Rng::seed_from_u64(0),
            view: true,
        }
    }

    pub fn is_view(&self) -> bool {
        self.view
    }

    fn shared(&self, name: String, shape: &[usize]) -> Result<Tensor> {
        match self.vars.get(&name) {
            Some(var) if var.dims() == shape => Ok(var.as_tensor().detach()),
            Some(var) => Err(Error::shape(format!("{name}: view asks for {shape:?}, variable is {:?}", var.dims()))),
            None => Err(Error::validation(name, "no variable to view")),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::validation(name, "parameter registered twice"));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    /// Normal(0, std) truncated to two standard deviations.
    pub fn trunc_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> Result<Tensor> {
        if self.view {
            return self.shared(name.into(), shape);
        }
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let mut values = Vec::with_capacity(n);
        while values.len() < n {
            let v: f64 = dist.sample(&mut self.rng);
            if v.abs() <= 2.0 * std {
                values.push(v);
            }
        }
        self.insert(name.into(), values, shape)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> Result<Tensor> {
        if self.view {
            return self.shared(name.into(), shape);
        }
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.insert(name.into(), values, shape)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<Tensor> {
        if self.view {
            return self.shared(name.into(), shape);
        }
        let n = shape.iter().product();
        self.insert(name.into(), vec![value; n], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn var(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::validation(name, "no such parameter"))
    }

    /// Flattened values of one parameter, widened to f64.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self
            .var(name)?
            .as_tensor()
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1()?)
    }

    /// Overwrites a parameter in place; every layer holding it sees the change.
    pub fn set_values(&self, name: &str, values: &[f64]) -> Result<()> {
        let var = self.var(name)?;
        if values.len() != var.elem_count() {
            return Err(Error::shape(format!(
                "{name}: expected {} values, got {}",
                var.elem_count(),
                values.len()
            )));
        }
        let t = Tensor::from_slice(values, var.shape(), &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    pub fn set_element(&self, name: &str, index: usize, value: f64) -> Result<()> {
        let mut values = self.values(name)?;
        let len = values.len();
        *values
            .get_mut(index)
            .ok_or(Error::IndexOutOfRange { what: "parameter", index, len })? = value;
        self.set_values(name, &values)
    }

    pub fn set_tensor(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self.var(name)?;
        if value.shape() != var.shape() {
            return Err(Error::shape(format!(
                "{name}: expected {:?}, got {:?}",
                var.shape(),
                value.shape()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Deep copy of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        if snapshot.len() != self.vars.len() {
            return Err(Error::shape(format!(
                "snapshot has {} tensors, store has {}",
                snapshot.len(),
                self.vars.len()
            )));
        }
        for (name, t) in snapshot {
            self.set_tensor(name, t)?;
        }
        Ok(())
    }
}

/// `y = x W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Self::glorot(ps, name, d_in, d_out, true)
    }

    /// Glorot-scaled weights, `std = sqrt(2 / (d_in + d_out))`.
    pub fn glorot(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let std = (2.0 / (d_in + d_out) as f64).sqrt();
        let weight = ps.trunc_normal(format!("{name}.weight"), &[d_in, d_out], std)?;
        let bias = match bias {
            true => Some(ps.constant(format!("{name}.bias"), &[d_out], 0.0)?),
            false => None,
        };
        Ok(Self { weight, bias })
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let (lead, d_in) = dims.split_at(dims.len() - 1);
        let rows: usize = lead.iter().product();
        let flat = x.reshape((rows, d_in[0]))?.matmul(&self.weight)?;
        let flat = match &self.bias {
            Some(b) => flat.broadcast_add(b)?,
            None => flat,
        };
        let mut out_shape = lead.to_vec();
        out_shape.push(self.d_out());
        Ok(flat.reshape(out_shape)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = ps.constant(format!("{name}.gamma"), &[dim], 1.0)?;
        let beta = ps.constant(format!("{name}.beta"), &[dim], 0.0)?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LAYER_NORM_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    // the shift is constant per row, so it carries no gradient
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Multi-head scaled dot-product attention over `(groups, seq, d_model)` inputs.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, d_model: usize, n_heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), d_model, d_model)?,
            k: Linear::new(ps, &format!("{name}.k"), d_model, d_model)?,
            v: Linear::new(ps, &format!("{name}.v"), d_model, d_model)?,
            o: Linear::new(ps, &format!("{name}.o"), d_model, d_model)?,
            n_heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (g, s, d) = x.dims3()?;
        Ok(x
            .reshape((g, s, self.n_heads, d / self.n_heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `query: (G, Lq, D)`, `context: (G, Lk, D)` → `(G, Lq, D)`.
    pub fn forward(&self, query: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (g, lq, d) = query.dims3()?;
        let head_dim = d / self.n_heads;
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(context)?)?;
        let v = self.split_heads(&self.v.forward(context)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (head_dim as f64).sqrt())?;
        let attn = softmax_last(&scores)?;
        let mixed = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((g, lq, d))?;
        self.o.forward(&mixed)
    }
}

/// Two-layer MLP with an exact (erf) GELU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    fc1: Linear,
    fc2: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d_model: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(ps, &format!("{name}.fc1"), d_model, hidden)?,
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, d_model)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)
    }
}

/// Rows scaled to unit Euclidean norm along the last axis.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Mean over all elements of `(a - b)^2`.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Scalar tensor to f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
