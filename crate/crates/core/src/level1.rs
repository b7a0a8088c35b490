//! Host view: files as sequences of track requests, and file outcomes
//! derived from track outcomes or from outcome probabilities measured by a
//! cache-subsystem run.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernel::SimTime;
use crate::level2::OutcomeClass;
use crate::workload::{Op, TrackRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileOp {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WriteMode {
    #[default]
    Fast,
    Through,
}

impl WriteMode {
    pub fn name(self) -> &'static str {
        match self {
            WriteMode::Fast => "fast",
            WriteMode::Through => "through",
        }
    }
}

impl FromStr for WriteMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fast" => Ok(WriteMode::Fast),
            "through" => Ok(WriteMode::Through),
            o => Err(format!("`{o}` is not fast|through")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRequest {
    pub file_id: u64,
    pub op: FileOp,
    pub tracks: Vec<u32>,
}

impl FileRequest {
    pub fn validate(&self) -> Result<()> {
        if self.tracks.is_empty() {
            return Err(Error::Config(format!("file {}: empty track list", self.file_id)));
        }
        let distinct: BTreeSet<u32> = self.tracks.iter().copied().collect();
        if distinct.len() != self.tracks.len() {
            return Err(Error::Config(format!("file {}: repeated track", self.file_id)));
        }
        Ok(())
    }
}

/// One track request per file track, in order, all at `at`.
pub fn expand_file_request(req: &FileRequest, mode: WriteMode, at: SimTime) -> Result<Vec<TrackRequest>> {
    req.validate()?;
    let op = match (req.op, mode) {
        (FileOp::Read, _) => Op::Read,
        (FileOp::Write, WriteMode::Fast) => Op::FastWrite,
        (FileOp::Write, WriteMode::Through) => Op::WriteThrough,
    };
    Ok(req
        .tracks
        .iter()
        .map(|&track| TrackRequest { arrival: at, track, op })
        .collect())
}

/// Worst track outcome by severity. An empty list is a success.
pub fn classify_file(outcomes: &[OutcomeClass]) -> OutcomeClass {
    outcomes
        .iter()
        .copied()
        .max_by_key(|o| o.severity())
        .unwrap_or(OutcomeClass::Success)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlackBoxProbabilities {
    pub p_success: f64,
    pub p_detected_uncorrected: f64,
    pub p_undetected: f64,
    pub p_unavailable: f64,
}

impl BlackBoxProbabilities {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!("outcome probabilities {p:?} outside [0,1]")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("outcome probabilities sum to {sum}, not 1")));
        }
        Ok(BlackBoxProbabilities {
            p_success: p[0],
            p_detected_uncorrected: p[1],
            p_undetected: p[2],
            p_unavailable: p[3],
        })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p_success, self.p_detected_uncorrected, self.p_undetected, self.p_unavailable]
    }

    pub fn from_summary(v: &Value) -> Result<Self> {
        let get = |k: &str| {
            v.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::MissingInput(format!("summary has no numeric `{k}`")))
        };
        BlackBoxProbabilities::new([
            get("p_success")?,
            get("p_detected_uncorrected")?,
            get("p_undetected")?,
            get("p_unavailable")?,
        ])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BlackBoxProbabilities::from_summary(&serde_json::from_str(&text)?)
    }

    pub fn sample_track<R: Rng + ?Sized>(&self, rng: &mut R) -> OutcomeClass {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (o, p) in OutcomeClass::ALL.into_iter().zip(self.as_array()) {
            acc += p;
            if u < acc {
                return o;
            }
        }
        // Rounding left a sliver above the cumulative sum.
        OutcomeClass::ALL
            .into_iter()
            .zip(self.as_array())
            .rev()
            .find(|&(_, p)| p > 0.0)
            .map_or(OutcomeClass::Success, |(o, _)| o)
    }
}

/// File outcome from `n_tracks` independent track outcomes drawn from `p`.
pub fn sample_blackbox<R: Rng + ?Sized>(p: &BlackBoxProbabilities, n_tracks: u32, rng: &mut R) -> OutcomeClass {
    let v: Vec<OutcomeClass> = (0..n_tracks).map(|_| p.sample_track(rng)).collect();
    classify_file(&v)
}

/// Random file: span uniform in `[min, max]`, distinct tracks.
pub fn random_file<R: Rng + ?Sized>(
    rng: &mut R,
    file_id: u64,
    op: FileOp,
    n_tracks: u32,
    span: (u32, u32),
) -> FileRequest {
    let k = rng.random_range(span.0..=span.1).min(n_tracks);
    let tracks = rand::seq::index::sample(rng, n_tracks as usize, k as usize)
        .into_iter()
        .map(|t| t as u32)
        .collect();
    FileRequest { file_id, op, tracks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RngStream;
    use proptest::prelude::*;

    use OutcomeClass::*;

    #[test]
    fn expansion() {
        let r = FileRequest {
            file_id: 1,
            op: FileOp::Read,
            tracks: vec![5, 2, 9],
        };
        let v = expand_file_request(&r, WriteMode::Fast, SimTime::ZERO).unwrap();
        assert_eq!(v.iter().map(|t| t.track).collect::<Vec<_>>(), vec![5, 2, 9]);
        assert!(v.iter().all(|t| t.op == Op::Read));
        let w = FileRequest { op: FileOp::Write, ..r.clone() };
        assert!(expand_file_request(&w, WriteMode::Fast, SimTime::ZERO).unwrap().iter().all(|t| t.op == Op::FastWrite));
        let dup = FileRequest { tracks: vec![1, 1], ..r.clone() };
        assert!(expand_file_request(&dup, WriteMode::Fast, SimTime::ZERO).is_err());
        let empty = FileRequest { tracks: vec![], ..r };
        assert!(expand_file_request(&empty, WriteMode::Fast, SimTime::ZERO).is_err());
    }

    #[test]
    fn severity_order() {
        assert_eq!(classify_file(&[Success, Success]), Success);
        assert_eq!(classify_file(&[Success, Undetected, Success]), Undetected);
        assert_eq!(classify_file(&[Unavailable, DetectedUncorrected]), Unavailable);
    }

    #[test]
    fn degenerate_probabilities() {
        let mut rng = RngStream::derive(3, "l1");
        for (i, o) in OutcomeClass::ALL.into_iter().enumerate() {
            let mut p = [0.0; 4];
            p[i] = 1.0;
            let bb = BlackBoxProbabilities::new(p).unwrap();
            for _ in 0..200 {
                assert_eq!(sample_blackbox(&bb, 4, &mut rng), o);
            }
        }
        assert!(BlackBoxProbabilities::new([0.5, 0.4, 0.0, 0.0]).is_err());
    }

    #[test]
    fn summary_keys() {
        let v: Value = serde_json::json!({
            "p_success": 0.9, "p_detected_uncorrected": 0.05, "p_undetected": 0.0, "p_unavailable": 0.05
        });
        let bb = BlackBoxProbabilities::from_summary(&v).unwrap();
        assert_eq!(bb.p_unavailable, 0.05);
        assert!(BlackBoxProbabilities::from_summary(&serde_json::json!({})).is_err());
    }

    #[test]
    fn random_file_is_valid() {
        let mut rng = RngStream::derive(1, "files");
        for i in 0..500 {
            let f = random_file(&mut rng, i, FileOp::Read, 20, (1, 8));
            f.validate().unwrap();
            assert!((1..=8).contains(&f.tracks.len()));
        }
    }

    proptest! {
        #[test]
        fn classify_is_permutation_invariant(v in prop::collection::vec(0usize..4, 1..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let a: Vec<OutcomeClass> = v.iter().map(|&i| OutcomeClass::ALL[i]).collect();
            let mut b = a.clone();
            b.shuffle(&mut RngStream::derive(seed, "perm"));
            prop_assert_eq!(classify_file(&a), classify_file(&b));
        }
    }
}
