use sha2::{Digest, Sha256};

use super::Tensor;
use crate::{Error, Result};

/// Named parameter tensors in a stable order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    frozen: bool,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Argument(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    /// Mutable access; fails once the set is frozen.
    pub fn tensor_mut(&mut self, index: usize) -> Result<&mut Tensor> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.entries[index].1)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// A trainable copy (the frozen flag is cleared on the copy only).
    pub fn thawed_copy(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            frozen: false,
        }
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values, as lowercase hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                h.update((*d as u32).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
