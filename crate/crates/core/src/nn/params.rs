use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::{Matrix, Tensor};
use crate::error::{Error, Result};

/// Named 32-bit tensors of one model, in a fixed order.
///
/// Freeze flags live next to the tensors but are runtime state only; they
/// are not persisted in checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    #[serde(skip)]
    frozen: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        self.frozen.push(false);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen.get(i).copied().unwrap_or(false)
    }

    pub fn set_frozen(&mut self, i: usize, frozen: bool) {
        if self.frozen.len() != self.names.len() {
            self.frozen.resize(self.names.len(), false);
        }
        self.frozen[i] = frozen;
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        self.frozen = vec![frozen; self.names.len()];
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// 64-bit working copies, in parameter order.
    pub fn to_matrices(&self) -> Vec<Matrix> {
        self.tensors.iter().map(Tensor::to_matrix).collect()
    }

    /// Zero gradient buffers shaped like [`ParamSet::to_matrices`].
    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.tensors
            .iter()
            .map(|t| {
                let m = t.to_matrix();
                Matrix::zeros(m.rows, m.cols)
            })
            .collect()
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
