//! Value types shared by every stage: class sets, probability vectors and samples.
//!
//! Classes are 0-based indices `0..K`.

use std::fmt;

use crate::error::{contract, Result};

/// A non-empty, sorted set of class indices.
///
/// Used both as a classifier's output mask and as a specialist's expertise
/// domain. The generalist domain is the full set `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExpertiseDomain {
    classes: Vec<usize>,
}

impl ExpertiseDomain {
    /// Builds a domain from arbitrary class indices; duplicates are dropped.
    pub fn new(classes: impl IntoIterator<Item = usize>, num_classes: usize) -> Result<Self> {
        let mut classes: Vec<usize> = classes.into_iter().collect();
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(contract("expertise domain must not be empty"));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(contract(format!(
                "class {c} outside 0..{num_classes} in expertise domain"
            )));
        }
        Ok(Self { classes })
    }

    /// The generalist domain `{0, .., num_classes - 1}`.
    pub fn full(num_classes: usize) -> Self {
        assert!(num_classes > 0, "num_classes must be > 0");
        Self {
            classes: (0..num_classes).collect(),
        }
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.binary_search(&class).is_ok()
    }

    pub fn is_full(&self, num_classes: usize) -> bool {
        self.classes.len() == num_classes
    }

    /// Largest class index plus one; a lower bound on `K`.
    pub fn min_num_classes(&self) -> usize {
        self.classes.last().map_or(0, |c| c + 1)
    }

    /// Membership flags for `0..num_classes`.
    pub fn to_mask(&self, num_classes: usize) -> Vec<bool> {
        let mut mask = vec![false; num_classes];
        for &c in &self.classes {
            mask[c] = true;
        }
        mask
    }
}

impl fmt::Display for ExpertiseDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, c) in self.classes.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

/// Length-K vector of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(pub Vec<f64>);

impl ProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Index of the smallest entry; ties go to the lowest index.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p < self.0[best] {
                best = i;
            }
        }
        best
    }

    /// The predictive confidence `max_k h_k`.
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Lowest-index argmax.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One labeled input with features scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}
