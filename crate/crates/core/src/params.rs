//! Named parameters, initialization and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// First/second moment buffers for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot<T: Real> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

/// Parameters keyed by dotted path (`block0.attn.wq`), iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Real = f64> {
    params: BTreeMap<String, Tensor<T>>,
    slots: BTreeMap<String, Slot<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            slots: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, mut t: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        t.requires_grad = true;
        t.zero_grad();
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    /// Replaces the values of an existing parameter (shape must match).
    pub fn set(&mut self, name: &str, values: Vec<T>) -> Result<()> {
        let t = self.get_mut(name)?;
        if values.len() != t.len() {
            return Err(Error::ShapeMismatch {
                op: "set",
                lhs: t.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        t.values_mut().copy_from_slice(&values);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn slot(&self, name: &str) -> Option<&Slot<T>> {
        self.slots.get(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn add_grad(&mut self, name: &str, g: &[T]) -> Result<()> {
        let t = self.get_mut(name)?;
        if g.len() != t.len() {
            return Err(Error::ShapeMismatch {
                op: "add_grad",
                lhs: t.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        let buf = t.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
        for (b, &x) in buf.iter_mut().zip(g) {
            *b += x;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// L2 norm of the gradients of the selected parameters.
    pub fn grad_norm(&self, select: impl Fn(&str) -> bool) -> T {
        let mut s = T::zero();
        for (name, t) in &self.params {
            if !select(name) {
                continue;
            }
            if let Some(g) = &t.grad {
                for &x in g {
                    s += x * x;
                }
            }
        }
        s.sqrt()
    }

    /// Rescales selected gradients so their global norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, select: impl Fn(&str) -> bool, max_norm: T) -> T {
        let norm = self.grad_norm(&select);
        if norm > max_norm && norm > T::zero() {
            let k = max_norm / norm;
            for (name, t) in self.params.iter_mut() {
                if !select(name) {
                    continue;
                }
                if let Some(g) = &mut t.grad {
                    g.iter_mut().for_each(|x| *x *= k);
                }
            }
        }
        norm
    }

    pub fn all_grads_zero(&self, select: impl Fn(&str) -> bool) -> bool {
        self.params
            .iter()
            .filter(|(n, _)| select(n))
            .all(|(_, t)| t.grad.as_ref().map_or(true, |g| g.iter().all(|x| *x == T::zero())))
    }
}

/// Adam hyperparameters. Defaults follow the usual transformer settings
/// (`β2 = 0.98`, `ε = 1e-9`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// One bias-corrected Adam update of the selected parameters, then zeroes
/// their gradients.
///
/// A parameter whose gradient is entirely zero keeps its value; only its
/// moments decay.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, cfg: &AdamConfig, select: impl Fn(&str) -> bool) -> Result<()> {
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));
    for (name, t) in store.params.iter() {
        if select(name) && t.grad.is_none() {
            return Err(Error::MissingGrad(name.clone()));
        }
    }
    for (name, t) in store.params.iter_mut() {
        if !select(name) {
            continue;
        }
        let n = t.len();
        let slot = store.slots.entry(name.clone()).or_insert_with(|| Slot {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        });
        slot.step += 1;
        let mut grad = t.grad.take().expect("checked above");
        let all_zero = grad.iter().all(|g| *g == T::zero());
        let bc1 = T::one() - b1.powi(slot.step as i32);
        let bc2 = T::one() - b2.powi(slot.step as i32);
        for i in 0..n {
            let g = grad[i];
            slot.m[i] = b1 * slot.m[i] + (T::one() - b1) * g;
            slot.v[i] = b2 * slot.v[i] + (T::one() - b2) * g * g;
        }
        if !all_zero && lr != T::zero() {
            let values = t.values_mut();
            for i in 0..n {
                let mh = slot.m[i] / bc1;
                let vh = slot.v[i] / bc2;
                values[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        grad.iter_mut().for_each(|g| *g = T::zero());
        t.grad = Some(grad);
    }
    Ok(())
}

/// Uniform Glorot initialization `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let bound = Float::sqrt(6.0 / (rows + cols) as f64);
    let values = (0..rows * cols).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::new(&[rows, cols], values).expect("glorot: positive shape")
}
