use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::condition::Scope;
use crate::plan::StepId;
use crate::value::Value;

/// Which step produced a binding, and in which loop pass. `step` is `None`
/// for bindings supplied when the run started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub step: Option<StepId>,
    pub iteration: u32,
}

impl Provenance {
    pub const EXTERNAL: Provenance = Provenance {
        step: None,
        iteration: 0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub value: Value,
    pub provenance: Provenance,
}

/// The run's global variable store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryState {
    bindings: BTreeMap<String, Binding>,
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_initial(initial: impl IntoIterator<Item = (String, Value)>) -> Self {
        let mut m = Self::new();
        for (k, v) in initial {
            m.bind(k, v, Provenance::EXTERNAL);
        }
        m
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.bindings.get(name).map(|b| &b.value)
    }

    pub fn binding(&self, name: &str) -> Option<&Binding> {
        self.bindings.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.bindings.contains_key(name)
    }

    pub fn bind(&mut self, name: impl Into<String>, value: Value, provenance: Provenance) {
        self.bindings.insert(name.into(), Binding { value, provenance });
    }

    /// Restores a loop variable to what it was before the loop.
    pub(crate) fn restore(&mut self, name: &str, previous: Option<Binding>) {
        match previous {
            Some(b) => {
                self.bindings.insert(name.to_string(), b);
            }
            None => {
                self.bindings.remove(name);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Binding)> {
        self.bindings.iter().map(|(k, b)| (k.as_str(), b))
    }

    pub fn values(&self) -> BTreeMap<String, Value> {
        self.bindings
            .iter()
            .map(|(k, b)| (k.clone(), b.value.clone()))
            .collect()
    }

    /// Canonical bytes of the named bindings; unbound names are omitted.
    pub fn snapshot(&self, names: &BTreeSet<String>) -> Vec<u8> {
        let subset: BTreeMap<&str, &Value> = names
            .iter()
            .filter_map(|n| self.get(n).map(|v| (n.as_str(), v)))
            .collect();
        serde_json::to_vec(&subset).expect("values always serialize")
    }

    /// Names whose binding differs from `base` (new or rebound).
    pub(crate) fn changed_since(&self, base: &MemoryState) -> Vec<String> {
        self.bindings
            .iter()
            .filter(|(k, b)| base.bindings.get(*k) != Some(*b))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

impl Scope for MemoryState {
    fn lookup(&self, name: &str) -> Option<&Value> {
        self.get(name)
    }
}
