//! Class-mean replay memory.
//!
//! One mean intermediate feature per seen class, stored in backbone-output
//! space. Entries are written once, when their session ends, and never change.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub mean: Vec<f64>,
    pub session: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMeanMemory {
    entries: BTreeMap<u32, MemoryEntry>,
}

/// Arithmetic mean of the features of each distinct label, ascending by label.
pub fn class_means(dataset: &FeatureDataset) -> Result<Vec<(u32, Vec<f64>)>> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot take class means of an empty dataset"));
    }
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (f, y) in dataset.iter() {
        let (sum, n) = sums.entry(y).or_insert_with(|| (vec![0.0; dataset.dim()], 0));
        for (s, x) in sum.iter_mut().zip(f) {
            *s += x;
        }
        *n += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(y, (sum, n))| (y, sum.into_iter().map(|s| s / n as f64).collect()))
        .collect())
}

impl ClassMeanMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class: u32) -> Option<&MemoryEntry> {
        self.entries.get(&class)
    }

    pub fn contains(&self, class: u32) -> bool {
        self.entries.contains_key(&class)
    }

    /// Entries in ascending class order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &MemoryEntry)> + '_ {
        self.entries.iter().map(|(&c, e)| (c, e))
    }

    /// Returns a new memory with `new_means` added under `session`.
    ///
    /// Fails with [`Error::InvalidState`] if any class is already stored, or
    /// if the new means disagree in dimension with the stored ones.
    pub fn update(&self, new_means: &[(u32, Vec<f64>)], session: usize) -> Result<Self> {
        let dim = self.entries.values().next().map(|e| e.mean.len());
        let mut next = self.clone();
        for (class, mean) in new_means {
            if let Some(d) = dim.or_else(|| new_means.first().map(|m| m.1.len())) {
                if mean.len() != d {
                    return Err(Error::state(format!(
                        "class {class} mean has dimension {}, memory holds dimension {d}",
                        mean.len()
                    )));
                }
            }
            if next.entries.contains_key(class) {
                return Err(Error::state(format!(
                    "class {class} is already in memory; sessions must have disjoint label spaces"
                )));
            }
            next.entries.insert(
                *class,
                MemoryEntry {
                    mean: mean.clone(),
                    session,
                },
            );
        }
        Ok(next)
    }

    /// Byte hash of each entry's mean, ascending by class.
    pub fn entry_hashes(&self) -> Vec<(u32, [u8; 32])> {
        self.iter()
            .map(|(c, e)| {
                let mut h = Sha256::new();
                for x in &e.mean {
                    h.update(x.to_le_bytes());
                }
                (c, h.finalize().into())
            })
            .collect()
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        for (c, e) in &self.entries {
            if e.mean.len() != dim || !e.mean.iter().all(|x| x.is_finite()) {
                return Err(Error::state(format!("memory entry for class {c} is malformed")));
            }
        }
        Ok(())
    }
}
