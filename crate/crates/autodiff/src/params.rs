//! Named parameter storage living across training steps.
//!
//! Entries keep insertion order so optimizer sweeps and checkpoints are
//! deterministic.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized by the trainer.
    Trainable,
    /// Persistent state that is saved but never optimized (e.g. running
    /// batch-norm statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<R: Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<R>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform(-bound, bound) with bound = sqrt(6 / fan_in).
    KaimingUniform { fan_in: usize },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Default, Clone)]
pub struct ParamStore<R: Real> {
    entries: Vec<ParamEntry<R>>,
    index: HashMap<String, usize>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> ParamStore<R> {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn define(
        &mut self,
        name: &str,
        shape: &[usize],
        kind: ParamKind,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![R::ZERO; n],
            Init::Ones => vec![R::ONE; n],
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| R::from_f64(rng.random_range(-bound..bound)))
                    .collect()
            }
            Init::Uniform { lo, hi } => (0..n)
                .map(|_| R::from_f64(rng.random_range(lo..hi)))
                .collect(),
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            kind,
        });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<R>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry<R>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    /// Entries in definition order.
    pub fn entries(&self) -> &[ParamEntry<R>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<R>] {
        &mut self.entries
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .count()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Replace data of an existing entry (shape must match).
    pub fn set_data(&mut self, name: &str, data: Vec<R>) -> Result<()> {
        let e = self.get_mut(name)?;
        if data.len() != e.data.len() {
            return Err(Error::shape(
                "set_data",
                format!("{name}: {} vs {}", data.len(), e.data.len()),
            ));
        }
        e.data = data;
        Ok(())
    }
}
