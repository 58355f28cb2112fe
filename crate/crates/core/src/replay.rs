//! Prioritized replay over offline and online transitions.
//!
//! Offline entries carry priority `1 / (alpha * t)` at online epoch `t`, online
//! entries priority 1. Draws are proportional to priority via a sum-tree.

use std::collections::VecDeque;

use crate::envs::{write_dataset, BehaviorTier, Dataset, Origin, Transition};
use crate::error::{Error, Result};

/// Priority of a transition with the given origin at epoch `t`.
pub fn priority_of(origin: Origin, t: u32, alpha: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("epochs are numbered from 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    match origin {
        Origin::Offline => Ok(1.0 / (alpha * f64::from(t))),
        Origin::Online => Ok(1.0),
        Origin::Model => Err(Error::InvalidArgument(
            "model transitions are not stored in the priority buffer".into(),
        )),
    }
}

/// Share of total priority held by offline entries:
/// `n_off f(t) / (n_off f(t) + n_on)`.
pub fn expected_offline_fraction(n_off: usize, n_on: usize, t: u32, alpha: f64) -> Result<f64> {
    if n_off + n_on == 0 {
        return Err(Error::EmptyBuffer);
    }
    let off = n_off as f64 * priority_of(Origin::Offline, t, alpha)?;
    Ok(off / (off + n_on as f64))
}

/// Binary sum-tree over `f64` leaves. Internal nodes are always recomputed
/// from their children, never patched with deltas, so sums stay exact up to
/// one rounding per level.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn with_capacity(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(value >= 0.0 && value.is_finite());
        if i >= self.leaves {
            self.grow(i + 1);
        }
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Sets many leaves, then rebuilds every internal node once.
    pub fn set_many(&mut self, updates: impl IntoIterator<Item = (usize, f64)>) {
        for (i, value) in updates {
            if i >= self.leaves {
                self.grow(i + 1);
            }
            self.nodes[self.leaves + i] = value;
        }
        self.rebuild();
    }

    fn grow(&mut self, needed: usize) {
        let old: Vec<f64> = self.nodes[self.leaves..].to_vec();
        *self = SumTree::with_capacity(needed.max(2 * self.leaves));
        self.nodes[self.leaves..self.leaves + old.len()].copy_from_slice(&old);
        self.rebuild();
    }

    fn rebuild(&mut self) {
        for node in (1..self.leaves).rev() {
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative interval contains `target`, for `target` in
    /// `[0, total)`. Never returns a zero-priority leaf while the total is positive.
    pub fn find(&self, mut target: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            if target < left || right <= 0.0 {
                node *= 2;
            } else {
                target -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }

    /// Largest absolute gap between an internal node and the sum of its
    /// children. Zero for a consistent tree.
    pub fn max_inconsistency(&self) -> f64 {
        (1..self.leaves)
            .map(|n| (self.nodes[n] - self.nodes[2 * n] - self.nodes[2 * n + 1]).abs())
            .fold(0.0, f64::max)
    }
}

/// Replay store for `D_off` and `D_on`, sampled in proportion to priority.
///
/// Slots `0..len` are always occupied. At capacity the oldest online entry is
/// overwritten; offline entries are never evicted.
#[derive(Debug, Clone)]
pub struct PriorityBuffer {
    entries: Vec<Transition>,
    tree: SumTree,
    alpha: f64,
    epoch: u32,
    capacity: Option<usize>,
    offline_slots: Vec<usize>,
    online_slots: VecDeque<usize>,
}

impl PriorityBuffer {
    pub fn new(alpha: f64, capacity: Option<usize>) -> Result<Self> {
        priority_of(Origin::Offline, 1, alpha)?;
        if capacity == Some(0) {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(Self {
            entries: Vec::new(),
            tree: SumTree::with_capacity(capacity.unwrap_or(1024).min(1 << 20)),
            alpha,
            epoch: 1,
            capacity,
            offline_slots: Vec::new(),
            online_slots: VecDeque::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_offline(&self) -> usize {
        self.offline_slots.len()
    }

    pub fn num_online(&self) -> usize {
        self.online_slots.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn get(&self, slot: usize) -> Option<(&Transition, f64)> {
        self.entries.get(slot).map(|t| (t, self.tree.get(slot)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Transition, f64)> + '_ {
        self.entries.iter().enumerate().map(|(i, t)| (t, self.tree.get(i)))
    }

    /// Moves to epoch `t`, re-prioritizing every offline entry to `1 / (alpha t)`.
    pub fn set_epoch(&mut self, t: u32) -> Result<()> {
        if t < self.epoch {
            return Err(Error::EpochRegression {
                current: self.epoch,
                requested: t,
            });
        }
        let p = priority_of(Origin::Offline, t, self.alpha)?;
        self.epoch = t;
        self.tree.set_many(self.offline_slots.iter().map(|&i| (i, p)));
        Ok(())
    }

    /// Inserts `d` with its priority at the current epoch.
    pub fn add(&mut self, d: Transition) -> Result<()> {
        let priority = priority_of(d.origin, self.epoch, self.alpha)?;
        let slot = if self.capacity.is_some_and(|c| self.entries.len() >= c) {
            let slot = self
                .online_slots
                .pop_front()
                .ok_or(Error::CapacityExceeded(self.entries.len()))?;
            self.entries[slot] = d;
            slot
        } else {
            self.entries.push(d);
            self.entries.len() - 1
        };
        match d.origin {
            Origin::Offline => self.offline_slots.push(slot),
            _ => self.online_slots.push_back(slot),
        }
        self.tree.set(slot, priority);
        Ok(())
    }

    pub fn extend(&mut self, data: impl IntoIterator<Item = Transition>) -> Result<()> {
        data.into_iter().try_for_each(|d| self.add(d))
    }

    /// Slot drawn with probability `priority / total`.
    pub fn sample_slot<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let target = rng.random::<f64>() * self.tree.total();
        Ok(self.tree.find(target).min(self.entries.len() - 1))
    }

    /// `batch` proportional draws with replacement.
    pub fn sample<R: rand::Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        (0..batch)
            .map(|_| self.sample_slot(rng).map(|i| self.entries[i]))
            .collect()
    }

    /// Uniform draw over all entries, ignoring priorities.
    pub fn sample_uniform<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Transition> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(self.entries[rng.random_range(0..self.entries.len())])
    }

    /// Uniform draw among entries of one origin.
    pub fn sample_origin<R: rand::Rng + ?Sized>(&self, origin: Origin, rng: &mut R) -> Result<Transition> {
        let slot = match origin {
            Origin::Offline if !self.offline_slots.is_empty() => {
                self.offline_slots[rng.random_range(0..self.offline_slots.len())]
            }
            Origin::Online if !self.online_slots.is_empty() => {
                self.online_slots[rng.random_range(0..self.online_slots.len())]
            }
            _ => return Err(Error::EmptyBuffer),
        };
        Ok(self.entries[slot])
    }

    /// Buffer contents in the dataset text format, for debugging.
    pub fn dump(&self, env_id: &str, behavior: BehaviorTier, seed: u64) -> String {
        write_dataset(&Dataset {
            transitions: self.entries.clone(),
            env_id: env_id.to_string(),
            behavior,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tr(origin: Origin, s: usize) -> Transition {
        Transition {
            state: s,
            action: 0,
            reward: 0.0,
            next_state: s,
            done: false,
            origin,
            step_index: 0,
        }
    }

    #[test]
    fn priority_formula() {
        assert_eq!(priority_of(Origin::Offline, 1, 1.0).unwrap(), 1.0);
        assert_eq!(priority_of(Origin::Offline, 4, 0.5).unwrap(), 0.5);
        assert_eq!(priority_of(Origin::Online, 7, 3.0).unwrap(), 1.0);
        assert!(priority_of(Origin::Offline, 0, 1.0).is_err());
        assert!(priority_of(Origin::Offline, 1, 0.0).is_err());
    }

    #[test]
    fn expected_fraction_examples() {
        assert_eq!(expected_offline_fraction(10, 0, 3, 1.0).unwrap(), 1.0);
        assert_eq!(expected_offline_fraction(1000, 1000, 1, 1.0).unwrap(), 0.5);
        let f = expected_offline_fraction(1000, 1000, 10, 1.0).unwrap();
        assert!((f - 100.0 / 1100.0).abs() < 1e-15);
    }

    #[test]
    fn set_epoch_halves_offline_mass() {
        let mut b = PriorityBuffer::new(1.0, None).unwrap();
        b.extend((0..100).map(|s| tr(Origin::Offline, s))).unwrap();
        assert_eq!(b.total_priority(), 100.0);
        b.set_epoch(2).unwrap();
        assert_eq!(b.total_priority(), 50.0);
        assert!(matches!(b.set_epoch(1), Err(Error::EpochRegression { .. })));
    }

    #[test]
    fn online_only_epoch_is_noop() {
        let mut b = PriorityBuffer::new(1.0, None).unwrap();
        b.extend((0..10).map(|s| tr(Origin::Online, s))).unwrap();
        b.set_epoch(5).unwrap();
        assert_eq!(b.total_priority(), 10.0);
    }

    #[test]
    fn add_uses_current_epoch() {
        let mut b = PriorityBuffer::new(1.0, None).unwrap();
        b.set_epoch(10).unwrap();
        b.add(tr(Origin::Offline, 0)).unwrap();
        b.add(tr(Origin::Online, 1)).unwrap();
        assert!((b.get(0).unwrap().1 - 0.1).abs() < 1e-15);
        assert_eq!(b.get(1).unwrap().1, 1.0);
        assert!(b.add(tr(Origin::Model, 1)).is_err());
    }

    #[test]
    fn capacity_evicts_oldest_online() {
        let mut b = PriorityBuffer::new(1.0, Some(4)).unwrap();
        b.add(tr(Origin::Offline, 0)).unwrap();
        for s in 1..4 {
            b.add(tr(Origin::Online, s)).unwrap();
        }
        b.add(tr(Origin::Online, 9)).unwrap();
        let states: Vec<usize> = b.iter().map(|(t, _)| t.state).collect();
        assert_eq!(states, vec![0, 9, 2, 3]);
        let mut full = PriorityBuffer::new(1.0, Some(2)).unwrap();
        full.add(tr(Origin::Offline, 0)).unwrap();
        full.add(tr(Origin::Offline, 1)).unwrap();
        assert!(matches!(
            full.add(tr(Origin::Online, 2)),
            Err(Error::CapacityExceeded(2))
        ));
    }

    #[test]
    fn tree_grows_past_initial_capacity() {
        let mut t = SumTree::with_capacity(2);
        for i in 0..37 {
            t.set(i, i as f64);
        }
        assert_eq!(t.total(), (0..37).sum::<usize>() as f64);
        assert_eq!(t.max_inconsistency(), 0.0);
    }

    #[test]
    fn find_skips_zero_leaves() {
        let mut t = SumTree::with_capacity(8);
        t.set(2, 1.0);
        for target in [0.0, 0.5, 0.999_999, 1.0, 1.5] {
            assert_eq!(t.find(target), 2);
        }
    }

    #[test]
    fn two_entry_proportions() {
        let mut b = PriorityBuffer::new(1.0, None).unwrap();
        b.add(tr(Origin::Offline, 0)).unwrap();
        b.add(tr(Origin::Online, 1)).unwrap();
        b.set_epoch(3).unwrap();
        // priorities 1/3 and 1: second entry has probability 0.75
        let mut rng = stream(1, 0);
        let n = 200_000;
        let hits = b.sample(n, &mut rng).unwrap().iter().filter(|t| t.state == 1).count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.75).abs() < 0.005, "{p}");
        assert!(PriorityBuffer::new(1.0, None).unwrap().sample(1, &mut rng).is_err());
    }

    #[test]
    fn origin_sampling_stays_in_stratum() {
        let mut b = PriorityBuffer::new(1.0, None).unwrap();
        b.extend((0..5).map(|s| tr(Origin::Offline, s))).unwrap();
        let mut rng = stream(2, 0);
        assert!(b.sample_origin(Origin::Online, &mut rng).is_err());
        b.add(tr(Origin::Online, 99)).unwrap();
        for _ in 0..50 {
            assert_eq!(b.sample_origin(Origin::Online, &mut rng).unwrap().state, 99);
            assert!(b.sample_origin(Origin::Offline, &mut rng).unwrap().state < 5);
        }
    }

    #[test]
    fn dump_round_trips() {
        let mut b = PriorityBuffer::new(1.0, None).unwrap();
        b.add(tr(Origin::Offline, 0)).unwrap();
        b.add(tr(Origin::Online, 1)).unwrap();
        let d = crate::envs::read_dataset(&b.dump("chain-2", BehaviorTier::Random, 0)).unwrap();
        assert_eq!(d.transitions.len(), 2);
        assert_eq!(d.transitions[1].origin, Origin::Online);
    }
}
