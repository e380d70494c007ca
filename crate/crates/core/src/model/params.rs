use std::collections::HashMap;

use crate::diffcore::{Tape, Tensor, Var};

/// Named parameter tensors in insertion order. Order is the contract for
/// gradient accumulation and optimizer state, so iteration never goes
/// through the name map.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        let idx = self.entries.len();
        self.index.insert(name.to_string(), idx);
        self.entries.push((name.to_string(), tensor));
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensor(self.idx(name))
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) {
        let idx = self.idx(name);
        assert_eq!(
            self.entries[idx].1.shape(),
            tensor.shape(),
            "parameter {name} shape change"
        );
        self.entries[idx].1 = tensor;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Record every parameter as a leaf on `tape`, in store order.
    pub fn stage(&self, tape: &mut Tape) -> Staged {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        Staged { vars }
    }

    /// Stage every parameter as a no-grad constant; used where another
    /// component's loss must not touch these parameters.
    pub fn stage_const(&self, tape: &mut Tape) -> Staged {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect();
        Staged { vars }
    }
}

/// Tape handles for one staging of a [`ParamStore`].
pub struct Staged {
    vars: Vec<Var>,
}

impl Staged {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn get(&self, store: &ParamStore, name: &str) -> Var {
        self.vars[store.idx(name)]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}
