use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{Gradients, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        Self(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(5.0),
        }
    }
}

/// What one optimizer step saw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamReport {
    /// Global L2 norm of the raw gradients.
    pub grad_norm: f64,
    /// Factor applied to the gradients before the moment update.
    pub clip_scale: f64,
}

#[derive(Debug, Clone)]
struct Moments<F> {
    m: Vec<F>,
    v: Vec<F>,
}

/// Named parameters with Adam state.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, ParamId>,
    moments: Vec<Moments<F>>,
    step: u64,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            moments: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<F>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.tensors.len());
        self.moments.push(Moments {
            m: vec![F::zero(); tensor.len()],
            v: vec![F::zero(); tensor.len()],
        });
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds `grads` into every parameter's gradient buffer. Parameters the
    /// backward pass never reached get an explicit zero gradient.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for t in &mut self.tensors {
            if t.grad.is_none() {
                t.grad = Some(vec![F::zero(); t.len()]);
            }
        }
        for (i, g) in grads.iter() {
            self.tensors[i].accumulate_grad(g);
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| t.grad.as_ref())
            .flatten()
            .map(|g| {
                let g = g.to_f64().unwrap_or(f64::NAN);
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Global-norm clipping followed by a bias-corrected Adam update.
    /// Gradients are consumed.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<AdamReport> {
        let norm = self.grad_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let clip_scale = match cfg.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let f = F::from_f64_lossy;
        let (b1, b2, scale) = (f(cfg.beta1), f(cfg.beta2), f(clip_scale));
        let step_size = f(cfg.lr / bc1);
        let inv_bc2 = f(1.0 / bc2);
        let eps = f(cfg.eps);
        for (t, mom) in self.tensors.iter_mut().zip(&mut self.moments) {
            let Some(grad) = t.grad.take() else {
                continue;
            };
            let data = t.data_mut();
            for i in 0..data.len() {
                let g = grad[i] * scale;
                mom.m[i] = b1 * mom.m[i] + (F::one() - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (F::one() - b2) * g * g;
                let denom = (mom.v[i] * inv_bc2).sqrt() + eps;
                data[i] = data[i] - step_size * mom.m[i] / denom;
            }
        }
        Ok(AdamReport {
            grad_norm: norm,
            clip_scale,
        })
    }

    /// Overwrites values by name; every stored parameter must be present
    /// with a matching shape.
    pub fn load_values(&mut self, named: Vec<(String, Tensor<F>)>) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, t) in named {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;
            if t.shape() != self.tensors[id.0].shape() {
                return Err(Error::Shape {
                    op: "load_values",
                    lhs: self.tensors[id.0].shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            self.tensors[id.0] = t;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint(format!("missing tensor {:?}", self.names[i])));
        }
        Ok(())
    }
}
