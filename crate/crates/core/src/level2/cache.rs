//! Cache residency: slots on memory cards, LRU order, dirty accounting, and
//! the health of cards and controller interfaces.

use std::collections::{BTreeMap, BTreeSet};

use crate::kernel::SimTime;
use crate::level2::ledger::Replica;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub slot: u32,
    /// `None` once the VM copy is lost to a card failure.
    pub vm: Option<Replica>,
    /// Only fast-written tracks keep an NVM copy.
    pub nvm: Option<Replica>,
    pub dirty: bool,
    pub stamp: SimTime,
}

#[derive(Debug, Clone)]
pub struct CacheState {
    capacity: u32,
    n_cards: u32,
    entries: BTreeMap<u32, CacheEntry>,
    lru: BTreeSet<(SimTime, u32)>,
    free: BTreeSet<u32>,
    fenced_free: BTreeSet<u32>,
    failed_cards: BTreeSet<u32>,
    dirty: u32,
    pub cci_chan_up: Vec<bool>,
    pub cci_mem_up: Vec<bool>,
}

impl CacheState {
    pub fn new(capacity: u32, n_cards: u32, n_cci_chan: u32, n_cci_mem: u32) -> Self {
        CacheState {
            capacity,
            n_cards: n_cards.max(1),
            entries: BTreeMap::new(),
            lru: BTreeSet::new(),
            free: (0..capacity).collect(),
            fenced_free: BTreeSet::new(),
            failed_cards: BTreeSet::new(),
            dirty: 0,
            cci_chan_up: vec![true; n_cci_chan as usize],
            cci_mem_up: vec![true; n_cci_mem as usize],
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn n_cards(&self) -> u32 {
        self.n_cards
    }

    pub fn vm_card(&self, slot: u32) -> u32 {
        slot % self.n_cards
    }

    /// NVM copies sit on the card half-way round from the VM copy.
    pub fn nvm_card(&self, slot: u32) -> u32 {
        (slot + self.n_cards / 2) % self.n_cards
    }

    pub fn card_ok(&self, card: u32) -> bool {
        !self.failed_cards.contains(&card)
    }

    pub fn any_card_ok(&self) -> bool {
        (self.failed_cards.len() as u32) < self.n_cards
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dirty_count(&self) -> u32 {
        self.dirty
    }

    pub fn get(&self, track: u32) -> Option<&CacheEntry> {
        self.entries.get(&track)
    }

    pub fn get_mut(&mut self, track: u32) -> Option<&mut CacheEntry> {
        self.entries.get_mut(&track)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&u32, &CacheEntry)> {
        self.entries.iter()
    }

    pub fn dirty_tracks(&self) -> Vec<u32> {
        self.entries.iter().filter(|(_, e)| e.dirty).map(|(&t, _)| t).collect()
    }

    pub fn has_free_slot(&self) -> bool {
        !self.free.is_empty()
    }

    /// Least-recently-used resident; ties go to the lower track id.
    pub fn lru_victim(&self) -> Option<u32> {
        self.lru.first().map(|&(_, t)| t)
    }

    /// Place a clean, empty VM copy of `track` in the lowest free usable slot.
    pub fn insert(&mut self, track: u32, now: SimTime) -> Option<u32> {
        assert!(!self.entries.contains_key(&track), "track {track} already resident");
        let slot = self.free.pop_first()?;
        self.entries.insert(
            track,
            CacheEntry {
                slot,
                vm: Some(Replica::default()),
                nvm: None,
                dirty: false,
                stamp: now,
            },
        );
        self.lru.insert((now, track));
        Some(slot)
    }

    pub fn remove(&mut self, track: u32) -> Option<CacheEntry> {
        let e = self.entries.remove(&track)?;
        self.lru.remove(&(e.stamp, track));
        if e.dirty {
            self.dirty -= 1;
        }
        if self.card_ok(self.vm_card(e.slot)) {
            self.free.insert(e.slot);
        } else {
            self.fenced_free.insert(e.slot);
        }
        Some(e)
    }

    pub fn touch(&mut self, track: u32, now: SimTime) {
        if let Some(e) = self.entries.get_mut(&track) {
            self.lru.remove(&(e.stamp, track));
            e.stamp = now;
            self.lru.insert((now, track));
        }
    }

    pub fn set_dirty(&mut self, track: u32, dirty: bool) {
        let e = self.entries.get_mut(&track).expect("set_dirty on non-resident track");
        match (e.dirty, dirty) {
            (false, true) => self.dirty += 1,
            (true, false) => self.dirty -= 1,
            _ => {}
        }
        e.dirty = dirty;
    }

    /// Fence `card`; returns the residents whose VM or NVM copy lives on it.
    pub fn fail_card(&mut self, card: u32) -> Vec<u32> {
        if !self.failed_cards.insert(card) {
            return vec![];
        }
        let on_card: Vec<u32> = self.free.iter().copied().filter(|&s| self.vm_card(s) == card).collect();
        for s in on_card {
            self.free.remove(&s);
            self.fenced_free.insert(s);
        }
        self.entries
            .iter()
            .filter(|(_, e)| self.vm_card(e.slot) == card || self.nvm_card(e.slot) == card)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn repair_card(&mut self, card: u32) {
        if !self.failed_cards.remove(&card) {
            return;
        }
        let back: Vec<u32> = self.fenced_free.iter().copied().filter(|&s| self.vm_card(s) == card).collect();
        for s in back {
            self.fenced_free.remove(&s);
            self.free.insert(s);
        }
    }

    /// Both interface sides have at least one working unit.
    pub fn interfaces_ok(&self) -> bool {
        self.cci_chan_up.iter().any(|&u| u) && self.cci_mem_up.iter().any(|&u| u)
    }

    /// Consistency check over the LRU index, slot pool and dirty count.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.entries.len() > self.capacity as usize {
            return Err(format!("{} residents exceed capacity {}", self.entries.len(), self.capacity));
        }
        let dirty = self.entries.values().filter(|e| e.dirty).count() as u32;
        if dirty != self.dirty {
            return Err(format!("dirty count {} but {} dirty residents", self.dirty, dirty));
        }
        if self.lru.len() != self.entries.len() {
            return Err("LRU index out of step with residents".into());
        }
        for (t, e) in &self.entries {
            if !self.lru.contains(&(e.stamp, *t)) {
                return Err(format!("track {t} missing from LRU index"));
            }
        }
        let used = self.entries.len() + self.free.len() + self.fenced_free.len();
        if used != self.capacity as usize {
            return Err(format!("slot accounting {used} != capacity {}", self.capacity));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(ns: u64) -> SimTime {
        SimTime::from_ns(ns)
    }

    #[test]
    fn victim_has_minimal_stamp() {
        let mut c = CacheState::new(3, 4, 2, 2);
        c.insert(10, t(5));
        c.insert(11, t(3));
        c.insert(12, t(9));
        assert_eq!(c.lru_victim(), Some(11));
        c.touch(11, t(20));
        assert_eq!(c.lru_victim(), Some(10));
    }

    #[test]
    fn stamp_tie_goes_to_lower_id() {
        let mut c = CacheState::new(3, 4, 2, 2);
        c.insert(7, t(1));
        c.insert(3, t(1));
        assert_eq!(c.lru_victim(), Some(3));
    }

    #[test]
    fn dirty_accounting_and_removal() {
        let mut c = CacheState::new(2, 4, 2, 2);
        c.insert(1, t(0));
        c.set_dirty(1, true);
        c.set_dirty(1, true);
        assert_eq!(c.dirty_count(), 1);
        c.remove(1);
        assert_eq!(c.dirty_count(), 0);
        c.check_invariants().unwrap();
    }

    #[test]
    fn card_failure_fences_free_slots() {
        let mut c = CacheState::new(8, 4, 2, 2);
        c.insert(100, t(0)); // slot 0, card 0
        assert_eq!(c.nvm_card(0), 2);
        let hit = c.fail_card(0);
        assert_eq!(hit, vec![100]);
        for i in 0..7 {
            let s = c.insert(200 + i, t(1)).unwrap_or(u32::MAX);
            assert_ne!(s % 4, 0, "slot {s} is on the failed card");
        }
        c.remove(100);
        assert!(!c.has_free_slot());
        c.repair_card(0);
        assert!(c.has_free_slot());
        c.check_invariants().unwrap();
    }

    #[test]
    fn interfaces() {
        let mut c = CacheState::new(1, 4, 2, 2);
        c.cci_chan_up[0] = false;
        assert!(c.interfaces_ok());
        c.cci_chan_up[1] = false;
        assert!(!c.interfaces_ok());
    }
}
