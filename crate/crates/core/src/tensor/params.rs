use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
///
/// Names are stable dotted paths (`spatial.0.head1.w_q`); insertion order is
/// the serialization order of checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero-filled store with identical names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::from_parts(t.shape().to_vec(), vec![0.0; t.len()]))
                .collect(),
        }
    }

    /// Registers every tensor on `tape` as a trainable borrowed leaf.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
        }
    }

    /// Adds `scale ·` the gradient of every bound parameter into `self`.
    /// Parameters the loss did not reach contribute nothing.
    pub fn accumulate(&mut self, binding: &Binding, grads: &Gradients, scale: f64) {
        for (dst, &var) in self.tensors.iter_mut().zip(&binding.vars) {
            if let Some(g) = grads.get(var) {
                for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                    *d += scale * s;
                }
            }
        }
    }

    /// Replaces the tensors of `self` with those of `other` after checking
    /// that names and shapes line up one to one.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter name lists differ".into()));
        }
        for ((name, dst), src) in self.names.iter().zip(&mut self.tensors).zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::shape(
                    "copy_from",
                    format!("{name}: {:?} vs {:?}", dst.shape(), src.shape()),
                ));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Tape variables of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
