use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensor owned by a [`ParamStore`]. Non-trainable entries are buffers
/// (batch-norm running statistics) that are checkpointed but never receive
/// gradients.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Flat registry of every parameter and buffer of a model. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            trainable,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Ids of trainable parameters whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable && p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn load_from<U: Real>(&mut self, other: &ParamStore<U>) -> Result<()> {
        for p in &mut self.params {
            let src = other.by_name(&p.name)?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shapes("load", p.value.shape(), src.value.shape()));
            }
            p.value = src.value.cast();
        }
        Ok(())
    }
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}
