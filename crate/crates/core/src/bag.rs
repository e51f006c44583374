use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supervision attached to a bag: a class label or a real-valued target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Label(usize),
    Value(f64),
}

/// Sparse word counts of one document. Entries are sorted by word id with no repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    id: usize,
    entries: Vec<(usize, f64)>,
    target: Option<Target>,
}

impl Bag {
    pub fn new(id: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = entries.into_iter().collect();
        for &(word, count) in &entries {
            if !count.is_finite() || count < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "bag {id}: count {count} for word {word} is not a non-negative number"
                )));
            }
        }
        entries.sort_by_key(|&(w, _)| w);
        if let Some(pair) = entries.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(Error::InvalidArgument(format!(
                "bag {id}: word {} listed twice",
                pair[0].0
            )));
        }
        Ok(Self {
            id,
            entries,
            target: None,
        })
    }

    /// Build a bag by counting word occurrences.
    pub fn from_words(id: usize, words: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = std::collections::BTreeMap::new();
        for w in words {
            *counts.entry(w).or_insert(0.0) += 1.0;
        }
        Self {
            id,
            entries: counts.into_iter().collect(),
            target: None,
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = Some(target);
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn target(&self) -> Option<Target> {
        self.target
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }

    /// True when no entry has a positive count.
    pub fn is_degenerate(&self) -> bool {
        self.entries.iter().all(|&(_, c)| c <= 0.0)
    }

    pub fn max_word(&self) -> Option<usize> {
        self.entries.last().map(|&(w, _)| w)
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.max_word() {
            Some(word) if word >= vocab => Err(Error::WordOutOfRange { word, vocab }),
            _ => Ok(()),
        }
    }

    /// Multiply every count by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            id: self.id,
            entries: self.entries.iter().map(|&(w, c)| (w, c * factor)).collect(),
            target: self.target,
        }
    }
}
