//! Max-min fair rate allocation by progressive filling.
//!
//! Every unfrozen flow sits at the current fill level. The link with the
//! smallest fair share `(capacity - frozen) / unfrozen` saturates next, and all
//! of its unfrozen flows freeze at that share. Shares only grow as flows
//! freeze, so a min-heap with lazy invalidation finds each bottleneck.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::topology::LinkId;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Share {
    value: f64,
    slot: u32,
    version: u32,
}

impl Eq for Share {}

impl Ord for Share {
    // Reversed for a min-heap; ties broken by slot for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Share {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct Slot {
    capacity: f64,
    frozen: f64,
    unfrozen: u32,
    version: u32,
    touched: bool,
    members: Vec<u32>,
}

impl Slot {
    fn share(&self) -> f64 {
        ((self.capacity - self.frozen) / self.unfrozen as f64).max(0.0)
    }
}

/// Reusable scratch space for repeated allocations over one link id space.
#[derive(Debug, Default)]
pub struct Allocator {
    slot_of: Vec<u32>,
    stamp_of: Vec<u32>,
    stamp: u32,
    slots: Vec<Slot>,
    used: usize,
    heap: BinaryHeap<Share>,
    frozen: Vec<bool>,
    touched: Vec<u32>,
}

impl Allocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Computes max-min fair rates for `paths`, writing one rate per path into `rates`.
    ///
    /// Flows with an empty path are unconstrained and get `f64::INFINITY`.
    pub fn allocate<P, C>(&mut self, paths: &[P], capacity: C, rates: &mut Vec<f64>)
    where
        P: AsRef<[LinkId]>,
        C: Fn(LinkId) -> f64,
    {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.stamp_of.iter_mut().for_each(|s| *s = 0);
            self.stamp = 1;
        }
        self.used = 0;
        self.heap.clear();
        rates.clear();
        rates.resize(paths.len(), f64::INFINITY);
        self.frozen.clear();
        self.frozen.resize(paths.len(), false);

        for (f, path) in paths.iter().enumerate() {
            for &link in path.as_ref() {
                let li = link.index();
                if li >= self.slot_of.len() {
                    self.slot_of.resize(li + 1, 0);
                    self.stamp_of.resize(li + 1, 0);
                }
                let slot = if self.stamp_of[li] == self.stamp {
                    self.slot_of[li] as usize
                } else {
                    let s = self.used;
                    self.used += 1;
                    if s == self.slots.len() {
                        self.slots.push(Slot::default());
                    }
                    let slot = &mut self.slots[s];
                    slot.capacity = capacity(link);
                    slot.frozen = 0.0;
                    slot.unfrozen = 0;
                    slot.version = 0;
                    slot.touched = false;
                    slot.members.clear();
                    self.stamp_of[li] = self.stamp;
                    self.slot_of[li] = s as u32;
                    s
                };
                let slot = &mut self.slots[slot];
                slot.unfrozen += 1;
                slot.members.push(f as u32);
            }
        }
        let mut init = std::mem::take(&mut self.heap).into_vec();
        init.clear();
        init.extend(self.slots[..self.used].iter().enumerate().map(|(i, slot)| Share {
            value: slot.share(),
            slot: i as u32,
            version: 0,
        }));
        self.heap = BinaryHeap::from(init);

        let mut level = 0.0f64;
        while let Some(top) = self.heap.pop() {
            let slot = &self.slots[top.slot as usize];
            if top.version != slot.version || slot.unfrozen == 0 {
                continue;
            }
            level = level.max(top.value);
            let members = std::mem::take(&mut self.slots[top.slot as usize].members);
            for &f in &members {
                let f = f as usize;
                if self.frozen[f] {
                    continue;
                }
                self.frozen[f] = true;
                rates[f] = level;
                for &link in paths[f].as_ref() {
                    let s = self.slot_of[link.index()] as usize;
                    let slot = &mut self.slots[s];
                    slot.frozen += level;
                    slot.unfrozen -= 1;
                    if !slot.touched {
                        slot.touched = true;
                        self.touched.push(s as u32);
                    }
                }
            }
            self.slots[top.slot as usize].members = members;
            for s in self.touched.drain(..) {
                let slot = &mut self.slots[s as usize];
                slot.touched = false;
                slot.version += 1;
                if slot.unfrozen > 0 {
                    self.heap.push(Share {
                        value: slot.share(),
                        slot: s,
                        version: slot.version,
                    });
                }
            }
        }
    }
}

/// One-shot max-min fair allocation; see [`Allocator`] for repeated use.
pub fn allocate_rates<P, C>(paths: &[P], capacity: C) -> Vec<f64>
where
    P: AsRef<[LinkId]>,
    C: Fn(LinkId) -> f64,
{
    let mut rates = Vec::new();
    Allocator::new().allocate(paths, capacity, &mut rates);
    rates
}
