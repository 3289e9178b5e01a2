use crate::diff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fsct::Container;

/// A named trainable array with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub value: Tensor,
    pub grad: Tensor,
}

impl ParamTensor {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        ParamTensor { value, grad }
    }
}

/// Ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, ParamTensor)>,
}

/// Tape variables bound to the entries of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.0[i]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some((_, p)) => *p = ParamTensor::new(value),
            None => self.entries.push((name, ParamTensor::new(value))),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in &mut self.entries {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Put every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|(_, p)| tape.leaf(p.value.clone()))
                .collect(),
        )
    }

    /// Add the gradients of bound leaves into the gradient buffers.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients) {
        for ((_, p), &v) in self.entries.iter_mut().zip(&bound.0) {
            if let Some(g) = grads.get(v) {
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    /// Gradients of bound leaves flattened in store order, zeros for leaves
    /// the output does not reach. Leaves the buffers untouched.
    pub fn flat_grads_of(&self, bound: &Bound, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for ((_, p), &v) in self.entries.iter().zip(&bound.0) {
            match grads.get(v) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, p.value.len())),
            }
        }
        out
    }

    /// Gradient buffers flattened in store order.
    pub fn grads_flat(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, p)| p.grad.data().iter().copied())
            .collect()
    }

    pub fn values_flat(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_grads_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!(
                "flat gradient has {} entries, store has {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for (_, p) in &mut self.entries {
            let n = p.grad.len();
            p.grad.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Append values as `prefix + name` arrays.
    pub fn export(&self, prefix: &str, out: &mut Container) {
        for (n, p) in &self.entries {
            out.push(format!("{prefix}{n}"), p.value.clone());
        }
    }

    /// Append gradient buffers as `prefix + name` arrays.
    pub fn export_grads(&self, prefix: &str, out: &mut Container) {
        for (n, p) in &self.entries {
            out.push(format!("{prefix}{n}"), p.grad.clone());
        }
    }

    /// Overwrite values from `prefix + name` arrays; shapes must match.
    pub fn import(&mut self, prefix: &str, src: &Container) -> Result<()> {
        for (n, p) in &mut self.entries {
            let key = format!("{prefix}{n}");
            let t = src
                .get(&key)
                .ok_or_else(|| Error::Format(format!("missing array {key}")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "{key}: stored {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Overwrite gradient buffers from `prefix + name` arrays.
    pub fn import_grads(&mut self, prefix: &str, src: &Container) -> Result<()> {
        for (n, p) in &mut self.entries {
            let key = format!("{prefix}{n}");
            let t = src
                .get(&key)
                .ok_or_else(|| Error::Format(format!("missing array {key}")))?;
            if t.shape() != p.grad.shape() {
                return Err(Error::Shape(format!(
                    "{key}: stored {:?}, expected {:?}",
                    t.shape(),
                    p.grad.shape()
                )));
            }
            p.grad = t.clone();
        }
        Ok(())
    }
}
