//! Discrete-event engine: virtual clock, ordered event queue and labelled
//! random streams.
//!
//! Time is kept in integer nanoseconds so that event ordering never depends
//! on floating-point rounding. Events that fire at the same instant are
//! dispatched in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::{Add, Sub};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Nanoseconds since the start of the simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const NS_PER_US: u64 = 1_000;
    pub const NS_PER_MS: u64 = 1_000_000;
    pub const NS_PER_S: u64 = 1_000_000_000;
    pub const NS_PER_H: u64 = 3_600 * Self::NS_PER_S;

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * Self::NS_PER_US)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * Self::NS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * Self::NS_PER_S)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * Self::NS_PER_S as f64).round().max(0.0) as u64)
    }

    pub fn from_hours_f64(h: f64) -> Self {
        SimTime((h * Self::NS_PER_H as f64).round().max(0.0) as u64)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / Self::NS_PER_MS as f64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::NS_PER_S as f64
    }

    pub fn as_hours_f64(self) -> f64 {
        self.0 as f64 / Self::NS_PER_H as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// A queued event: `(fire_at, seq)` is the dispatch key.
#[derive(Debug, Clone)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: K,
}

impl<K> PartialEq for Event<K> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<K> Eq for Event<K> {}

impl<K> PartialOrd for Event<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Event<K> {
    // Reversed so that BinaryHeap pops the earliest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Event queue plus virtual clock.
#[derive(Debug)]
pub struct Scheduler<K> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<K>>,
    dispatched: u64,
}

impl<K> Default for Scheduler<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Scheduler<K> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Queue `kind` to fire at `fire_at`.
    ///
    /// # Panics
    /// Scheduling before the current clock is a programming error.
    pub fn schedule(&mut self, fire_at: SimTime, kind: K) {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: {fire_at} < now {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { fire_at, seq, kind });
    }

    pub fn schedule_in(&mut self, delay: SimTime, kind: K) {
        self.schedule(self.now + delay, kind);
    }

    /// Pop the next event if it fires at or before `t_end`, advancing the
    /// clock to its firing time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<K>> {
        if self.queue.peek()?.fire_at > t_end {
            return None;
        }
        let ev = self.queue.pop()?;
        self.now = ev.fire_at;
        self.dispatched += 1;
        Some(ev)
    }

    /// Move the clock forward to `t` (never backwards).
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatch every event with `fire_at <= t_end` through `handler`, then
    /// leave the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F)
    where
        F: FnMut(&mut Self, Event<K>),
    {
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
        }
        self.advance_to(t_end);
    }
}

/// A named, independently seeded random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Stream seeded from `SHA-256(seed || label)`.
    pub fn derive(global_seed: u64, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(global_seed.to_le_bytes());
        h.update(label.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        RngStream {
            label: label.to_owned(),
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Child stream keyed by this stream's label and `index`; does not
    /// consume draws from the parent.
    pub fn substream(&self, global_seed: u64, index: u64) -> RngStream {
        RngStream::derive(global_seed, &format!("{}#{index}", self.label))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Hands out labelled streams for one simulation run, rejecting reuse of a
/// label.
#[derive(Debug)]
pub struct RngFactory {
    seed: u64,
    issued: BTreeSet<String>,
}

impl RngFactory {
    pub fn new(seed: u64) -> Self {
        RngFactory {
            seed,
            issued: BTreeSet::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&mut self, label: &str) -> Result<RngStream> {
        if label.is_empty() {
            return Err(Error::Config("empty random stream label".into()));
        }
        if !self.issued.insert(label.to_owned()) {
            return Err(Error::DuplicateStream(label.to_owned()));
        }
        Ok(RngStream::derive(self.seed, label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn drain(s: &mut Scheduler<u32>, t_end: SimTime) -> Vec<(u64, u32)> {
        let mut out = Vec::new();
        s.run_until(t_end, |sch, ev| out.push((sch.now().as_ns(), ev.kind)));
        out
    }

    #[test]
    fn event_at_zero_dispatched_first() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(4), 1);
        s.schedule(SimTime::ZERO, 0);
        assert_eq!(drain(&mut s, SimTime(10)), vec![(0, 0), (4, 1)]);
    }

    #[test]
    fn equal_times_keep_insertion_order() {
        let mut s = Scheduler::new();
        for k in 0..5 {
            s.schedule(SimTime(7), k);
        }
        let kinds: Vec<u32> = drain(&mut s, SimTime(7)).into_iter().map(|x| x.1).collect();
        assert_eq!(kinds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn later_scheduled_earlier_event_goes_first() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(5), 5);
        s.schedule(SimTime(3), 3);
        assert_eq!(drain(&mut s, SimTime(5)), vec![(3, 3), (5, 5)]);
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut s: Scheduler<u32> = Scheduler::new();
        let hour = SimTime(SimTime::NS_PER_H);
        assert!(drain(&mut s, hour).is_empty());
        assert_eq!(s.now(), hour);
        assert_eq!(s.dispatched(), 0);
    }

    #[test]
    fn events_after_horizon_stay_queued() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(20), 1);
        assert!(drain(&mut s, SimTime(10)).is_empty());
        assert_eq!(s.pending(), 1);
        assert_eq!(s.now(), SimTime(10));
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn scheduling_in_the_past_panics() {
        let mut s = Scheduler::new();
        s.advance_to(SimTime(10));
        s.schedule(SimTime(9), 0u8);
    }

    #[test]
    fn handler_can_schedule_follow_ups() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(0), 3u32);
        let mut seen = Vec::new();
        s.run_until(SimTime(100), |sch, ev| {
            seen.push(ev.kind);
            if ev.kind > 0 {
                sch.schedule_in(SimTime(10), ev.kind - 1);
            }
        });
        assert_eq!(seen, vec![3, 2, 1, 0]);
    }

    #[test]
    fn distinct_labels_give_distinct_streams() {
        let mut a = RngStream::derive(1, "bus1.faults");
        let mut b = RngStream::derive(1, "bus2.faults");
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn same_label_same_seed_reproduces() {
        let mut a = RngStream::derive(99, "workload");
        let mut b = RngStream::derive(99, "workload");
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = RngStream::derive(1, "x");
        let mut b = RngStream::derive(2, "x");
        let same = (0..10_000).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn duplicate_label_rejected() {
        let mut f = RngFactory::new(5);
        f.fork("a").unwrap();
        assert!(matches!(f.fork("a"), Err(Error::DuplicateStream(_))));
        assert!(f.fork("").is_err());
    }

    #[test]
    fn substream_is_stable_and_leaves_parent_untouched() {
        let parent = RngStream::derive(3, "trials");
        let mut c1 = parent.substream(3, 7);
        let mut c2 = parent.substream(3, 7);
        assert_eq!(c1.random::<u64>(), c2.random::<u64>());
        let mut p1 = parent.clone();
        let mut p2 = RngStream::derive(3, "trials");
        assert_eq!(p1.next_u64(), p2.next_u64());
    }

    proptest! {
        #[test]
        fn dispatch_order_is_total_on_time_and_seq(times in proptest::collection::vec(0u64..50, 1..60)) {
            let mut s = Scheduler::new();
            for (i, t) in times.iter().enumerate() {
                s.schedule(SimTime(*t), i);
            }
            let mut seen = Vec::new();
            s.run_until(SimTime(100), |sch, ev| {
                assert_eq!(sch.now(), ev.fire_at);
                seen.push((ev.fire_at.as_ns(), ev.kind));
            });
            prop_assert_eq!(seen.len(), times.len());
            for w in seen.windows(2) {
                prop_assert!(w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 < w[1].1));
            }
        }
    }
}
