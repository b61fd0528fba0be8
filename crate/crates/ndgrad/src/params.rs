use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Ordered set of named parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    blocks: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            blocks: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateBlock(name));
        }
        let id = self.blocks.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.blocks.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.blocks[id]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.blocks[self.id(name)?])
    }

    pub fn set(&mut self, id: usize, value: Tensor<T>) -> Result<()> {
        let current = &self.blocks[id];
        if current.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_block",
                lhs: current.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.blocks[id] = value;
        Ok(())
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.blocks[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.blocks)
    }

    pub fn num_values(&self) -> usize {
        self.blocks.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            blocks: self.blocks.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Zero tensors with the same layout, e.g. to accumulate gradients.
    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients {
            names: self.names.clone(),
            blocks: self.blocks.iter().map(|b| Tensor::zeros(b.shape())).collect(),
        }
    }
}

/// Gradient per parameter block, aligned with the [`ParamSet`] it was computed for.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    names: Vec<String>,
    blocks: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn from_blocks(names: Vec<String>, blocks: Vec<Tensor<T>>) -> Self {
        assert_eq!(names.len(), blocks.len());
        Self { names, blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.blocks[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.blocks[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.blocks[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.blocks)
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.sq_norm().as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(Tensor::all_finite)
    }

    pub fn scale(&mut self, factor: T) {
        for b in &mut self.blocks {
            for v in b.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::InvalidTensor("gradient layouts differ".into()));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Gradients<U> {
        Gradients {
            names: self.names.clone(),
            blocks: self.blocks.iter().map(Tensor::cast).collect(),
        }
    }
}
