//! Behavioral detection-condition evaluators for parity, EDAC and the two
//! CRCs, and the location → mechanism scope table.
//!
//! Nothing here computes real check bits; each evaluator only decides what
//! the mechanism would report for a given per-symbol bit-error pattern.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

pub const SYMBOLS_PER_TRACK: u16 = 1024;
pub const BITS_PER_SYMBOL: u16 = 256;
pub const TRACK_BITS: u32 = SYMBOLS_PER_TRACK as u32 * BITS_PER_SYMBOL as u32;

/// Default CRC escape probability for patterns beyond the guaranteed region.
pub const DEFAULT_P_ESCAPE: f64 = 1.0 / 4_294_967_296.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub symbols_per_record: u16,
    pub bits_per_symbol: u16,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            symbols_per_record: SYMBOLS_PER_TRACK,
            bits_per_symbol: BITS_PER_SYMBOL,
        }
    }
}

impl Geometry {
    pub fn record_bits(&self) -> u32 {
        self.symbols_per_record as u32 * self.bits_per_symbol as u32
    }
}

/// Sparse per-symbol bit-error counts for one record, sorted by symbol.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolErrors {
    counts: Vec<(u16, u16)>,
}

impl SymbolErrors {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from `(symbol, count)` pairs; duplicates are summed, zeros dropped.
    pub fn from_pairs(geom: Geometry, pairs: impl IntoIterator<Item = (u16, u16)>) -> Self {
        let mut e = SymbolErrors::new();
        for (s, c) in pairs {
            e.add(geom, s, c);
        }
        e
    }

    /// Add `bits` flips to `symbol`, saturating at the symbol width.
    pub fn add(&mut self, geom: Geometry, symbol: u16, bits: u16) {
        assert!(
            symbol < geom.symbols_per_record,
            "symbol {symbol} outside record of {}",
            geom.symbols_per_record
        );
        if bits == 0 {
            return;
        }
        match self.counts.binary_search_by_key(&symbol, |&(s, _)| s) {
            Ok(i) => {
                let c = &mut self.counts[i].1;
                *c = c.saturating_add(bits).min(geom.bits_per_symbol);
            }
            Err(i) => self.counts.insert(i, (symbol, bits.min(geom.bits_per_symbol))),
        }
    }

    pub fn get(&self, symbol: u16) -> u16 {
        self.counts
            .binary_search_by_key(&symbol, |&(s, _)| s)
            .map(|i| self.counts[i].1)
            .unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, u16)> + '_ {
        self.counts.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn symbols_in_error(&self) -> usize {
        self.counts.len()
    }

    pub fn total_bits(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c as u64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Clean,
    Corrected,
    Detected,
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOutcome {
    pub status: Status,
    pub corrected_symbols: usize,
    pub detected_symbols: usize,
    pub missed_symbols: usize,
}

impl CheckOutcome {
    fn tally(corrected: usize, detected: usize, missed: usize) -> Self {
        let status = if detected > 0 {
            Status::Detected
        } else if corrected > 0 {
            Status::Corrected
        } else if missed > 0 {
            Status::Missed
        } else {
            Status::Clean
        };
        CheckOutcome {
            status,
            corrected_symbols: corrected,
            detected_symbols: detected,
            missed_symbols: missed,
        }
    }

    /// The check raised an uncorrectable error and the operation stops.
    pub fn aborts(&self) -> bool {
        self.status == Status::Detected
    }
}

/// Per-symbol parity: odd counts are seen, even counts slip through.
pub fn parity_check(errs: &SymbolErrors) -> CheckOutcome {
    let odd = errs.iter().filter(|&(_, c)| c % 2 == 1).count();
    CheckOutcome::tally(0, odd, errs.symbols_in_error() - odd)
}

/// Per-symbol EDAC: 1–2 bits corrected, 3 detected, 4+ missed.
pub fn edac_check(errs: &SymbolErrors) -> (CheckOutcome, SymbolErrors) {
    let (mut corrected, mut detected, mut missed) = (0, 0, 0);
    let mut after = SymbolErrors::new();
    for (s, c) in errs.iter() {
        match c {
            1 | 2 => corrected += 1,
            3 => {
                detected += 1;
                after.counts.push((s, c));
            }
            _ => {
                missed += 1;
                after.counts.push((s, c));
            }
        }
    }
    (CheckOutcome::tally(corrected, detected, missed), after)
}

/// Core CRC decision given the number of erroneous symbols and a uniform
/// draw `u` in [0,1). The draw is only consulted beyond three symbols.
pub fn crc_decide(symbols_in_error: usize, p_escape: f64, u: f64) -> CheckOutcome {
    match symbols_in_error {
        0 => CheckOutcome::tally(0, 0, 0),
        n if n <= 3 => CheckOutcome::tally(0, n, 0),
        n if u < p_escape => CheckOutcome::tally(0, 0, n),
        n => CheckOutcome::tally(0, n, 0),
    }
}

/// FE-CRC / PS-CRC over one record. A uniform draw is consumed exactly when
/// four or more symbols are in error, so the stream position depends only on
/// the error pattern.
pub fn crc_check<R: Rng + ?Sized>(errs: &SymbolErrors, p_escape: f64, rng: &mut R) -> CheckOutcome {
    let n = errs.symbols_in_error();
    let u = if n > 3 { rng.random::<f64>() } else { 1.0 };
    crc_decide(n, p_escape, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    Parity,
    Edac,
    FeCrc,
    PsCrc,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [Mechanism::Parity, Mechanism::Edac, Mechanism::FeCrc, Mechanism::PsCrc];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Parity => "PARITY",
            Mechanism::Edac => "EDAC",
            Mechanism::FeCrc => "FE_CRC",
            Mechanism::PsCrc => "PS_CRC",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    XferChannelToCache,
    CciChan,
    Bus1,
    CciMem,
    Bus2,
    CacheMemory,
    XferCacheToDisk,
    Disk,
}

impl Location {
    pub const ALL: [Location; 8] = [
        Location::XferChannelToCache,
        Location::CciChan,
        Location::Bus1,
        Location::CciMem,
        Location::Bus2,
        Location::CacheMemory,
        Location::XferCacheToDisk,
        Location::Disk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Location::XferChannelToCache => "XFER_CHANNEL_TO_CACHE",
            Location::CciChan => "CCI_CHAN",
            Location::Bus1 => "BUS1",
            Location::CciMem => "CCI_MEM",
            Location::Bus2 => "BUS2",
            Location::CacheMemory => "CACHE_MEMORY",
            Location::XferCacheToDisk => "XFER_CACHE_TO_DISK",
            Location::Disk => "DISK",
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Location {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Location::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown error-origin location `{s}`")))
    }
}

/// Mechanisms that can see an error originating at `loc`, in data-path order.
pub fn mechanisms_for(loc: Location) -> &'static [Mechanism] {
    use Mechanism::*;
    match loc {
        Location::XferChannelToCache | Location::CciChan | Location::CciMem => &[FeCrc],
        Location::Bus1 => &[Parity, FeCrc],
        Location::Bus2 | Location::CacheMemory => &[Edac, FeCrc],
        Location::XferCacheToDisk | Location::Disk => &[PsCrc, FeCrc],
    }
}

/// Set of mechanisms that still cover a given error fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Scope(pub u8);

impl Scope {
    pub const NONE: Scope = Scope(0);
    pub const PARITY: Scope = Scope(1);
    pub const EDAC: Scope = Scope(2);
    pub const FE: Scope = Scope(4);
    pub const PS: Scope = Scope(8);

    pub fn of(m: Mechanism) -> Scope {
        match m {
            Mechanism::Parity => Scope::PARITY,
            Mechanism::Edac => Scope::EDAC,
            Mechanism::FeCrc => Scope::FE,
            Mechanism::PsCrc => Scope::PS,
        }
    }

    pub fn for_location(loc: Location) -> Scope {
        mechanisms_for(loc).iter().fold(Scope::NONE, |s, &m| s | Scope::of(m))
    }

    pub fn covers(self, m: Mechanism) -> bool {
        self.0 & Scope::of(m).0 != 0
    }

    pub fn without(self, m: Mechanism) -> Scope {
        Scope(self.0 & !Scope::of(m).0)
    }
}

impl std::ops::BitOr for Scope {
    type Output = Scope;
    fn bitor(self, rhs: Scope) -> Scope {
        Scope(self.0 | rhs.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RngStream;
    use proptest::prelude::*;
    use rand::seq::index;
    use rand::Rng;

    fn g() -> Geometry {
        Geometry::default()
    }

    fn one(sym: u16, bits: u16) -> SymbolErrors {
        SymbolErrors::from_pairs(g(), [(sym, bits)])
    }

    #[test]
    fn parity_examples() {
        assert_eq!(parity_check(&one(7, 1)).status, Status::Detected);
        assert_eq!(parity_check(&SymbolErrors::new()).status, Status::Clean);
        assert_eq!(parity_check(&one(7, 2)).status, Status::Missed);
    }

    #[test]
    fn parity_detection_rate_is_odd_fraction() {
        // For k flips in one symbol, parity sees the pattern iff k is odd.
        for k in 1..=8u16 {
            let got = parity_check(&one(0, k)).aborts();
            assert_eq!(got, k % 2 == 1, "k={k}");
        }
    }

    #[test]
    fn edac_examples() {
        let (o, after) = edac_check(&one(3, 2));
        assert_eq!(o.status, Status::Corrected);
        assert_eq!(after.get(3), 0);
        let (o, after) = edac_check(&one(3, 3));
        assert_eq!(o.status, Status::Detected);
        assert_eq!(after.get(3), 3);
        let (o, _) = edac_check(&one(3, 4));
        assert_eq!(o.status, Status::Missed);
    }

    #[test]
    fn edac_detection_dominates_correction() {
        let e = SymbolErrors::from_pairs(g(), [(0, 1), (1, 3), (2, 5)]);
        let (o, after) = edac_check(&e);
        assert_eq!(o.status, Status::Detected);
        assert_eq!((o.corrected_symbols, o.detected_symbols, o.missed_symbols), (1, 1, 1));
        assert_eq!(after.iter().collect::<Vec<_>>(), vec![(1, 3), (2, 5)]);
    }

    #[test]
    fn crc_examples() {
        let mut rng = RngStream::derive(0, "crc");
        let three = SymbolErrors::from_pairs(g(), [(1, 4), (9, 200), (1000, 1)]);
        assert_eq!(crc_check(&three, 1.0, &mut rng).status, Status::Detected);
        assert_eq!(crc_check(&SymbolErrors::new(), 1.0, &mut rng).status, Status::Clean);
        let five = SymbolErrors::from_pairs(g(), (0..5).map(|s| (s, 4)));
        assert_eq!(crc_check(&five, 1.0, &mut rng).status, Status::Missed);
        assert_eq!(crc_check(&five, 0.0, &mut rng).status, Status::Detected);
    }

    #[test]
    fn crc_five_symbols_default_escape_monte_carlo() {
        let mut rng = RngStream::derive(1, "crc.mc");
        let five = SymbolErrors::from_pairs(g(), (0..5).map(|s| (s * 7, 1)));
        let missed = (0..1_000_000)
            .filter(|_| crc_check(&five, DEFAULT_P_ESCAPE, &mut rng).status == Status::Missed)
            .count();
        // Expected misses 2.3e-4; any miss at all would be a 1-in-4000 event.
        assert_eq!(missed, 0);
    }

    #[test]
    fn crc_draws_only_beyond_guarantee() {
        let mut a = RngStream::derive(2, "crc.draws");
        let mut b = RngStream::derive(2, "crc.draws");
        crc_check(&SymbolErrors::from_pairs(g(), (0..3).map(|s| (s, 1))), 0.5, &mut a);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn scope_table_rows() {
        use Mechanism::*;
        assert_eq!(mechanisms_for(Location::Bus1), &[Parity, FeCrc]);
        assert_eq!(mechanisms_for(Location::CacheMemory), &[Edac, FeCrc]);
        assert_eq!(mechanisms_for(Location::Disk), &[PsCrc, FeCrc]);
        for l in Location::ALL {
            assert!(mechanisms_for(l).contains(&FeCrc), "{l}");
            assert_eq!(mechanisms_for(l).contains(&Parity), l == Location::Bus1);
            assert_eq!(
                mechanisms_for(l).contains(&Edac),
                matches!(l, Location::Bus2 | Location::CacheMemory)
            );
            assert_eq!(
                mechanisms_for(l).contains(&PsCrc),
                matches!(l, Location::XferCacheToDisk | Location::Disk)
            );
        }
    }

    #[test]
    fn location_names_parse_and_unknown_is_rejected() {
        for l in Location::ALL {
            assert_eq!(l.name().parse::<Location>().unwrap(), l);
        }
        assert!("BUS3".parse::<Location>().is_err());
    }

    #[test]
    fn add_saturates_at_symbol_width() {
        let mut e = one(5, 250);
        e.add(g(), 5, 10);
        assert_eq!(e.get(5), 256);
        assert_eq!(e.total_bits(), 256);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4096))]
        // Sampled placements of 1..=3 erroneous symbols never slip past the CRC,
        // even with p_escape = 1.
        #[test]
        fn crc_guarantee_region_never_misses(
            n in 1usize..=3,
            seed in any::<u64>(),
            bits in proptest::collection::vec(1u16..=256, 3),
        ) {
            let mut rng = RngStream::derive(seed, "place");
            let syms = index::sample(&mut rng, SYMBOLS_PER_TRACK as usize, n);
            let e = SymbolErrors::from_pairs(g(), syms.iter().zip(&bits).map(|(s, &b)| (s as u16, b)));
            prop_assert_eq!(crc_check(&e, 1.0, &mut rng).status, Status::Detected);
        }

        #[test]
        fn edac_residual_rule(count in 1u16..=256) {
            let (_, after) = edac_check(&one(11, count));
            prop_assert_eq!(after.get(11), if count <= 2 { 0 } else { count });
        }
    }

    #[test]
    fn crc_guarantee_region_bulk_placements() {
        // 2^20 random placements across the guaranteed region.
        let mut rng = RngStream::derive(3, "crc.bulk");
        for i in 0..(1u32 << 20) {
            let n = 1 + (i % 3) as usize;
            let syms = index::sample(&mut rng, SYMBOLS_PER_TRACK as usize, n);
            let bits = 1 + (i % 256) as u16;
            let e = SymbolErrors::from_pairs(g(), syms.iter().map(|s| (s as u16, bits)));
            assert_ne!(crc_check(&e, 1.0, &mut rng).status, Status::Missed);
        }
    }
}
