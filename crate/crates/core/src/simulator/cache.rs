//! LRU block cache at native-block granularity, with origin tags.

use std::collections::{BTreeMap, HashMap};

use crate::address::TableLba;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Demand,
    /// Fetched (or refreshed) by the decision made after the given query index.
    Prefetch(u64),
}

#[derive(Debug, Clone)]
pub struct LruCache {
    capacity: usize,
    clock: u64,
    entries: HashMap<TableLba, (u64, Origin)>,
    order: BTreeMap<u64, TableLba>,
}

impl LruCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, clock: 0, entries: HashMap::new(), order: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, b: &TableLba) -> bool {
        self.entries.contains_key(b)
    }

    pub fn origin(&self, b: &TableLba) -> Option<Origin> {
        self.entries.get(b).map(|e| e.1)
    }

    fn stamp(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Moves a resident block to the MRU position and sets its tag. Returns
    /// the previous tag, or `None` when the block is not resident.
    pub fn touch(&mut self, b: TableLba, origin: Origin) -> Option<Origin> {
        let now = self.stamp();
        let e = self.entries.get_mut(&b)?;
        self.order.remove(&e.0);
        let prev = e.1;
        *e = (now, origin);
        self.order.insert(now, b);
        Some(prev)
    }

    /// Inserts a non-resident block at MRU, evicting the LRU block when full.
    pub fn insert(&mut self, b: TableLba, origin: Origin) -> Option<TableLba> {
        if self.capacity == 0 {
            return None;
        }
        debug_assert!(!self.contains(&b));
        let mut evicted = None;
        if self.entries.len() >= self.capacity {
            let (_, victim) = self.order.pop_first().expect("full cache has entries");
            self.entries.remove(&victim);
            evicted = Some(victim);
        }
        let now = self.stamp();
        self.entries.insert(b, (now, origin));
        self.order.insert(now, b);
        evicted
    }

    /// Resident blocks from least to most recently used.
    pub fn lru_order(&self) -> Vec<TableLba> {
        self.order.values().copied().collect()
    }
}
