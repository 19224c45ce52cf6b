use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Named parameter tensors of one network, in registration order.
///
/// Each store carries a process-unique id so a [`Graph`](super::Graph) can
/// hold leaves from several networks at once.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    /// Registers a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.values[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.values[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) {
        assert_eq!(self.names, other.names, "parameter layout mismatch");
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            assert_eq!(dst.shape(), src.shape());
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}
