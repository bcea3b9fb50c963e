//! Symbol names and the table that classifies them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// An interned symbol name. Cloning is a reference-count bump.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(Arc<str>);

impl Symbol {
    pub fn new(name: &str) -> Self {
        Symbol(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Symbol {
    fn from(s: &str) -> Self {
        Symbol::new(s)
    }
}

impl Serialize for Symbol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Symbol::new(&s))
    }
}

/// What role a declared symbol plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    State,
    Input,
    ExtraInput,
    ControllerState,
    Reference,
}

/// Ordered registry of every name an expression may mention.
///
/// Names are unique across categories, and within a category the declaration
/// order is the coordinate order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymbolTable {
    entries: Vec<(Symbol, Category)>,
    index: BTreeMap<Symbol, usize>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from the usual three groups of names.
    pub fn with_groups(states: &[&str], inputs: &[&str], extra: &[&str]) -> Result<Self, ModelError> {
        let mut t = SymbolTable::new();
        for s in states {
            t.declare(s, Category::State)?;
        }
        for s in inputs {
            t.declare(s, Category::Input)?;
        }
        for s in extra {
            t.declare(s, Category::ExtraInput)?;
        }
        Ok(t)
    }

    pub fn declare(&mut self, name: &str, category: Category) -> Result<Symbol, ModelError> {
        if !is_identifier(name) {
            return Err(ModelError::InvalidName(name.to_string()));
        }
        let sym = Symbol::new(name);
        if self.index.contains_key(&sym) {
            return Err(ModelError::DuplicateSymbol(name.to_string()));
        }
        self.index.insert(sym.clone(), self.entries.len());
        self.entries.push((sym.clone(), category));
        Ok(sym)
    }

    /// Changes the category of an existing symbol, keeping its name.
    pub fn reclassify(&mut self, name: &str, category: Category) -> Result<(), ModelError> {
        let idx = *self
            .index
            .get(&Symbol::new(name))
            .ok_or_else(|| ModelError::UndeclaredSymbol(name.to_string()))?;
        self.entries[idx].1 = category;
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<(Symbol, Category)> {
        self.index
            .get(&Symbol::new(name))
            .map(|&i| self.entries[i].clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(&Symbol::new(name))
    }

    pub fn category(&self, sym: &Symbol) -> Option<Category> {
        self.index.get(sym).map(|&i| self.entries[i].1)
    }

    pub fn of(&self, category: Category) -> Vec<Symbol> {
        self.entries
            .iter()
            .filter(|(_, c)| *c == category)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Symbol, Category)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns a name not yet in the table, starting from `base`.
    pub fn fresh_name(&self, base: &str) -> String {
        if !self.contains(base) {
            return base.to_string();
        }
        (1..)
            .map(|i| format!("{base}_{i}"))
            .find(|n| !self.contains(n))
            .expect("unbounded search")
    }
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !matches!(name, "sin" | "cos")
}
