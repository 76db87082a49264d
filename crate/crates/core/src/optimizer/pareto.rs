//! Per-instance Pareto front over candidate score vectors.
//!
//! A candidate belongs to the front when it attains the best score seen so
//! far on at least one validation instance and no other candidate weakly
//! dominates it with a strict gain somewhere.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParetoError {
    #[error("candidate {0} has no scores")]
    UnscoredCandidate(String),
    #[error("score vector has length {got}, front expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("front is empty")]
    EmptyFront,
    #[error("candidate {0} is already on the front")]
    DuplicateId(String),
}

/// `a` is at least as good as `b` everywhere and strictly better somewhere.
pub fn dominates<T: Scalar>(a: &[T], b: &[T]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member<T> {
    pub id: String,
    pub scores: Vec<T>,
}

/// Result of offering a candidate to the front.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontUpdate {
    pub admitted: bool,
    pub evicted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Front<T> {
    members: Vec<Member<T>>,
    per_instance_best: Vec<T>,
}

impl<T: Scalar> Default for Front<T> {
    fn default() -> Self {
        Self { members: Vec::new(), per_instance_best: Vec::new() }
    }
}

impl<T: Scalar> Front<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Members in admission order.
    pub fn members(&self) -> &[Member<T>] {
        &self.members
    }

    pub fn per_instance_best(&self) -> &[T] {
        &self.per_instance_best
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.iter().any(|m| m.id == id)
    }

    /// Number of instances on which `scores` attains the current best.
    pub fn wins(&self, scores: &[T]) -> usize {
        scores.iter().zip(&self.per_instance_best).filter(|(s, b)| s >= b).count()
    }

    /// Offers a scored candidate.
    ///
    /// The candidate is admitted when it reaches the current best on at least
    /// one instance and no member dominates it. Admission evicts members it
    /// dominates and members that no longer hold the best score anywhere.
    pub fn insert(&mut self, id: impl Into<String>, scores: Vec<T>) -> Result<FrontUpdate, ParetoError> {
        let id = id.into();
        if self.contains(&id) {
            return Err(ParetoError::DuplicateId(id));
        }
        if self.members.is_empty() {
            self.per_instance_best = scores.clone();
            self.members.push(Member { id, scores });
            return Ok(FrontUpdate { admitted: true, evicted: Vec::new() });
        }
        if scores.len() != self.per_instance_best.len() {
            return Err(ParetoError::DimensionMismatch { expected: self.per_instance_best.len(), got: scores.len() });
        }
        let reaches_best = self.wins(&scores) > 0;
        if !reaches_best || self.members.iter().any(|m| dominates(&m.scores, &scores)) {
            return Ok(FrontUpdate { admitted: false, evicted: Vec::new() });
        }

        for (best, s) in self.per_instance_best.iter_mut().zip(&scores) {
            if s > best {
                *best = *s;
            }
        }
        let mut evicted = Vec::new();
        let best = &self.per_instance_best;
        self.members.retain(|m| {
            let keep = !dominates(&scores, &m.scores) && m.scores.iter().zip(best).any(|(s, b)| s >= b);
            if !keep {
                evicted.push(m.id.clone());
            }
            keep
        });
        self.members.push(Member { id, scores });
        Ok(FrontUpdate { admitted: true, evicted })
    }

    /// Samples a member with probability proportional to its number of
    /// per-instance wins.
    pub fn select_parent<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Member<T>, ParetoError> {
        if self.members.is_empty() {
            return Err(ParetoError::EmptyFront);
        }
        let weights: Vec<usize> = self.members.iter().map(|m| self.wins(&m.scores)).collect();
        let dist = WeightedIndex::new(&weights).expect("every member wins at least one instance");
        Ok(&self.members[dist.sample(rng)])
    }
}
