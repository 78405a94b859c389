//! Bounded FIFO key/value memory.

use std::collections::VecDeque;

use super::CellConfig;
use crate::numerics::Real;

/// One cached experience: a key encoded from a detached prediction and the
/// hidden state produced at the same step.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry<T> {
    pub key: Vec<T>,
    pub value: Vec<T>,
    /// Step index that produced this entry.
    pub step: usize,
}

/// Queue of at most `capacity` entries, oldest first. Pushing into a full
/// queue evicts exactly the oldest entry.
#[derive(Clone, Debug)]
pub struct IndexedMemory<T> {
    entries: VecDeque<MemoryEntry<T>>,
    capacity: usize,
}

impl<T: Real> IndexedMemory<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Appends `entry`; returns the evicted entry when the queue was full.
    pub fn push(&mut self, entry: MemoryEntry<T>) -> Option<MemoryEntry<T>> {
        if self.capacity == 0 {
            return Some(entry);
        }
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(entry);
        evicted
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &MemoryEntry<T>> + DoubleEndedIterator {
        self.entries.iter()
    }

    pub fn get(&self, slot: usize) -> Option<&MemoryEntry<T>> {
        self.entries.get(slot)
    }

    /// Swaps two slots in place.
    pub fn swap(&mut self, a: usize, b: usize) {
        self.entries.swap(a, b);
    }

    /// Bytes held by keys and values.
    pub fn resident_bytes(&self) -> usize {
        self.entries
            .iter()
            .map(|e| (e.key.len() + e.value.len()) * T::BYTES)
            .sum()
    }
}

/// Size of a full memory: `(d/4 + d) · S · element_bytes`.
pub fn memory_footprint_bytes(config: &CellConfig, element_bytes: usize) -> usize {
    (config.key_dim() + config.hidden) * config.memory * element_bytes
}
