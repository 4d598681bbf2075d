use std::sync::Arc;

use rand::Rng;

use super::segment::Segment;
use crate::error::{Error, Result};

/// Binary tree of partial sums over slot weights.
#[derive(Clone, Debug)]
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn set(&mut self, slot: usize, value: f64) {
        let mut i = slot + self.leaves;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    fn get(&self, slot: usize) -> f64 {
        self.nodes[slot + self.leaves]
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Slot whose cumulative range contains `mass` (clamped into range).
    fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            if mass < left || self.nodes[2 * i + 1] <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

/// Identifies a sampled slot together with the version of its contents, so
/// a priority update for an already-evicted segment is dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotRef {
    pub slot: usize,
    pub generation: u64,
}

#[derive(Clone, Debug)]
pub struct SampledBatch {
    pub refs: Vec<SlotRef>,
    pub segments: Vec<Arc<Segment>>,
    /// Importance weights, normalised so the largest is 1.
    pub weights: Vec<f32>,
}

/// Fixed-capacity replay of segments, sampled in proportion to
/// `priority^alpha`, evicting the oldest segment when full.
#[derive(Clone, Debug)]
pub struct PrioritizedBuffer {
    capacity: usize,
    alpha: f64,
    slots: Vec<Option<Arc<Segment>>>,
    generations: Vec<u64>,
    tree: SumTree,
    next: usize,
    len: usize,
    pushed: u64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            alpha,
            slots: vec![None; capacity],
            generations: vec![0; capacity],
            tree: SumTree::new(capacity),
            next: 0,
            len: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Segments ever inserted.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, segment: Segment, priority: f64) -> SlotRef {
        let slot = self.next;
        self.next = (self.next + 1) % self.capacity;
        if self.slots[slot].is_none() {
            self.len += 1;
        }
        self.slots[slot] = Some(Arc::new(segment));
        self.generations[slot] += 1;
        self.tree
            .set(slot, priority.max(f64::MIN_POSITIVE).powf(self.alpha));
        self.pushed += 1;
        SlotRef {
            slot,
            generation: self.generations[slot],
        }
    }

    /// Current sampling probability of `slot`.
    pub fn probability(&self, slot: usize) -> f64 {
        self.tree.get(slot) / self.tree.total()
    }

    /// Draws `batch` segments with replacement.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampledBatch> {
        if self.len < batch || batch == 0 {
            return Err(Error::NotReady {
                have: self.len,
                need: batch.max(1),
            });
        }
        let total = self.tree.total();
        let mut refs = Vec::with_capacity(batch);
        let mut segments = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut slot = self.tree.find(rng.gen::<f64>() * total);
            if self.slots[slot].is_none() {
                // rounding at the far edge of the cumulative range
                slot = (0..self.capacity)
                    .rev()
                    .find(|&s| self.slots[s].is_some())
                    .expect("buffer is not empty");
            }
            let p = self.tree.get(slot) / total;
            weights.push((self.len as f64 * p).powf(-beta));
            refs.push(SlotRef {
                slot,
                generation: self.generations[slot],
            });
            segments.push(Arc::clone(
                self.slots[slot].as_ref().expect("occupied slot"),
            ));
        }
        let max = weights.iter().copied().fold(0.0, f64::max);
        let weights = weights.iter().map(|w| (w / max) as f32).collect();
        Ok(SampledBatch {
            refs,
            segments,
            weights,
        })
    }

    /// Writes back new priorities; stale references are skipped. Returns
    /// how many were applied.
    pub fn update_priorities(&mut self, refs: &[SlotRef], priorities: &[f64]) -> usize {
        let mut applied = 0;
        for (r, &p) in refs.iter().zip(priorities) {
            if self.generations[r.slot] == r.generation && self.slots[r.slot].is_some() {
                self.tree
                    .set(r.slot, p.max(f64::MIN_POSITIVE).powf(self.alpha));
                applied += 1;
            }
        }
        applied
    }
}
