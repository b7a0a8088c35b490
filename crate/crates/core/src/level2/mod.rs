//! Track-level model of the cache subsystem and disk array.

pub mod cache;
pub mod controller;
pub mod disks;
pub mod faults;
pub mod ledger;

use std::fmt;
use std::str::FromStr;

pub use controller::{Component, Controller, ControllerConfig, Recovery, ReplicaKind, StoredTarget};
pub use faults::{FaultPlan, TransferModel};
pub use ledger::{Disposition, ErrorRecord, Fragment, Origin, RecordId, Replica};

/// Result of one track operation as seen by the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutcomeClass {
    Success,
    DetectedUncorrected,
    Undetected,
    Unavailable,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 4] = [
        OutcomeClass::Success,
        OutcomeClass::DetectedUncorrected,
        OutcomeClass::Undetected,
        OutcomeClass::Unavailable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeClass::Success => "SUCCESS",
            OutcomeClass::DetectedUncorrected => "DETECTED_UNCORRECTED",
            OutcomeClass::Undetected => "UNDETECTED",
            OutcomeClass::Unavailable => "UNAVAILABLE",
        }
    }

    /// Aggregation rank: undetected > unavailable > detected > success.
    pub fn severity(self) -> u8 {
        match self {
            OutcomeClass::Success => 0,
            OutcomeClass::DetectedUncorrected => 1,
            OutcomeClass::Unavailable => 2,
            OutcomeClass::Undetected => 3,
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutcomeClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        OutcomeClass::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}
