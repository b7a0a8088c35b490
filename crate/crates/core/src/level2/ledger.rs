//! Error records and the per-replica fragment ledgers that carry them.

use std::fmt;

use crate::codes::{Geometry, Mechanism, Scope, SymbolErrors};
use crate::kernel::SimTime;

/// Component that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    CciChan,
    CciMem,
    CacheMemory,
    Disk,
    Bus1,
    Bus2,
}

impl Origin {
    pub const ALL: [Origin; 6] = [
        Origin::CciChan,
        Origin::CciMem,
        Origin::CacheMemory,
        Origin::Disk,
        Origin::Bus1,
        Origin::Bus2,
    ];

    /// Five-way code; both interface sides report as `CCI`.
    pub fn code5(self) -> &'static str {
        match self {
            Origin::CciChan | Origin::CciMem => "CCI",
            _ => self.code6(),
        }
    }

    /// Six-way code with the interface sides split.
    pub fn code6(self) -> &'static str {
        match self {
            Origin::CciChan => "CCI_CHAN",
            Origin::CciMem => "CCI_MEM",
            Origin::CacheMemory => "CM",
            Origin::Disk => "D",
            Origin::Bus1 => "B1",
            Origin::Bus2 => "B2",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code6())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Disposition {
    Pending,
    Corrected,
    Detected(Mechanism),
    Overwritten,
    EscapedToHost,
}

impl Disposition {
    pub fn name(self) -> &'static str {
        match self {
            Disposition::Pending => "PENDING",
            Disposition::Corrected => "CORRECTED",
            Disposition::Detected(Mechanism::Parity) => "DETECTED_PARITY",
            Disposition::Detected(Mechanism::Edac) => "DETECTED_EDAC",
            Disposition::Detected(Mechanism::FeCrc) => "DETECTED_FE_CRC",
            Disposition::Detected(Mechanism::PsCrc) => "DETECTED_PS_CRC",
            Disposition::Overwritten => "OVERWRITTEN",
            Disposition::EscapedToHost => "ESCAPED_TO_HOST",
        }
    }

    pub const ALL: [Disposition; 8] = [
        Disposition::Pending,
        Disposition::Corrected,
        Disposition::Detected(Mechanism::Parity),
        Disposition::Detected(Mechanism::Edac),
        Disposition::Detected(Mechanism::FeCrc),
        Disposition::Detected(Mechanism::PsCrc),
        Disposition::Overwritten,
        Disposition::EscapedToHost,
    ];
}

pub type RecordId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub id: RecordId,
    pub track: u32,
    pub origin: Origin,
    pub injected_at: SimTime,
    pub footprint: SymbolErrors,
    pub disposition: Disposition,
    pub resolved_at: Option<SimTime>,
    /// Earliest first-error time of any replica this record has lived in.
    pub latency_start: SimTime,
    /// Number of replica ledgers currently holding fragments of this record.
    pub homes: u32,
}

impl ErrorRecord {
    pub fn is_pending(&self) -> bool {
        self.disposition == Disposition::Pending
    }
}

/// One record's bit flips in one symbol, with the mechanisms still able to
/// see them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fragment {
    pub record: RecordId,
    pub symbol: u16,
    pub bits: u16,
    pub scope: Scope,
}

/// Sum of in-scope flips per symbol.
pub fn view(frags: &[Fragment], geom: Geometry, m: Mechanism) -> SymbolErrors {
    SymbolErrors::from_pairs(
        geom,
        frags.iter().filter(|f| f.scope.covers(m)).map(|f| (f.symbol, f.bits)),
    )
}

/// Distinct record ids in fragment order of first appearance, sorted.
pub fn records_in(frags: &[Fragment]) -> Vec<RecordId> {
    let mut ids: Vec<RecordId> = frags.iter().map(|f| f.record).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Error ledger of one stored copy of a track.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replica {
    pub frags: Vec<Fragment>,
    pub first_error: Option<(SimTime, Origin)>,
}

impl Replica {
    pub fn is_clean(&self) -> bool {
        self.frags.is_empty()
    }

    pub fn contains(&self, id: RecordId) -> bool {
        self.frags.iter().any(|f| f.record == id)
    }
}

/// Arena of every record injected during a run.
#[derive(Debug, Default)]
pub struct RecordStore {
    records: Vec<ErrorRecord>,
}

impl RecordStore {
    pub fn create(&mut self, track: u32, origin: Origin, at: SimTime, footprint: SymbolErrors) -> RecordId {
        let id = self.records.len() as RecordId;
        self.records.push(ErrorRecord {
            id,
            track,
            origin,
            injected_at: at,
            footprint,
            disposition: Disposition::Pending,
            resolved_at: None,
            latency_start: at,
            homes: 0,
        });
        id
    }

    pub fn get(&self, id: RecordId) -> &ErrorRecord {
        &self.records[id as usize]
    }

    pub fn get_mut(&mut self, id: RecordId) -> &mut ErrorRecord {
        &mut self.records[id as usize]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ErrorRecord> {
        self.records.iter()
    }

    pub fn pending(&self) -> usize {
        self.records.iter().filter(|r| r.is_pending()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(Origin::CciChan.code5(), "CCI");
        assert_eq!(Origin::CciMem.code5(), "CCI");
        assert_eq!(Origin::CciMem.code6(), "CCI_MEM");
        assert_eq!(Origin::Bus1.code5(), "B1");
    }

    #[test]
    fn view_filters_by_scope_and_sums() {
        let frags = [
            Fragment { record: 0, symbol: 3, bits: 1, scope: Scope::PARITY | Scope::FE },
            Fragment { record: 1, symbol: 3, bits: 2, scope: Scope::FE },
            Fragment { record: 2, symbol: 9, bits: 1, scope: Scope::EDAC | Scope::FE },
        ];
        let g = Geometry::default();
        assert_eq!(view(&frags, g, Mechanism::Parity).iter().collect::<Vec<_>>(), vec![(3, 1)]);
        assert_eq!(view(&frags, g, Mechanism::FeCrc).iter().collect::<Vec<_>>(), vec![(3, 3), (9, 1)]);
        assert!(view(&frags, g, Mechanism::PsCrc).is_empty());
        assert_eq!(records_in(&frags), vec![0, 1, 2]);
    }
}
