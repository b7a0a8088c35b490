//! Track request streams: trace-file reader/writer and a synthetic generator
//! with truncated-Zipf track skew, exponential interarrivals and an i.i.d.
//! operation mix.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::kernel::{RngStream, SimTime};

pub const TRACE_HEADER: &str = "t_us,track,op";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Read,
    FastWrite,
    WriteThrough,
}

impl Op {
    pub fn code(self) -> &'static str {
        match self {
            Op::Read => "R",
            Op::FastWrite => "FW",
            Op::WriteThrough => "WT",
        }
    }
}

impl FromStr for Op {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "R" => Ok(Op::Read),
            "FW" => Ok(Op::FastWrite),
            "WT" => Ok(Op::WriteThrough),
            other => Err(format!("unknown op `{other}` (expected R, FW or WT)")),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackRequest {
    pub arrival: SimTime,
    pub track: u32,
    pub op: Op,
}

/// Probabilities of read / fast-write / write-through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpMix {
    pub read: f64,
    pub fast_write: f64,
    pub write_through: f64,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix {
            read: 0.86,
            fast_write: 0.114,
            write_through: 0.026,
        }
    }
}

impl OpMix {
    fn pick(&self, u: f64) -> Op {
        if u < self.read {
            Op::Read
        } else if u < self.read + self.fast_write {
            Op::FastWrite
        } else {
            Op::WriteThrough
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub n_tracks: u32,
    pub n_active: u32,
    pub zipf_exponent: f64,
    pub mean_interarrival: SimTime,
    pub mix: OpMix,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            n_tracks: 480_000,
            n_active: 127_000,
            zipf_exponent: 1.2914511457560587,
            mean_interarrival: SimTime::from_ms(5),
            mix: OpMix::default(),
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.mix;
        for (k, v) in [
            ("workload.mix_read", m.read),
            ("workload.mix_fast_write", m.fast_write),
            ("workload.mix_write_through", m.write_through),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::field(k, format!("{v} outside [0,1]")));
            }
        }
        let sum = m.read + m.fast_write + m.write_through;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::field("workload.mix_*", format!("mix sums to {sum}, not 1")));
        }
        if self.n_tracks == 0 {
            return Err(Error::field("workload.n_tracks", "must be positive"));
        }
        if self.n_active == 0 || self.n_active > self.n_tracks {
            return Err(Error::field(
                "workload.n_active",
                format!("must be in 1..={}", self.n_tracks),
            ));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent <= 0.0 {
            return Err(Error::field("workload.zipf_exponent", "must be > 0"));
        }
        if self.mean_interarrival.as_ns() < SimTime::NS_PER_US {
            return Err(Error::field("workload.mean_interarrival_ms", "must be at least 1 µs"));
        }
        Ok(())
    }
}

/// Share of the `k` most popular of `n` ranks under Zipf exponent `s`.
pub fn zipf_top_k_share(s: f64, k: u32, n: u32) -> f64 {
    let mut top = 0.0;
    let mut total = 0.0;
    // Sum from the tail so small terms are not swamped.
    for r in (1..=n).rev() {
        let w = (r as f64).powf(-s);
        total += w;
        if r <= k {
            top += w;
        }
    }
    top / total
}

/// Bisect for the exponent whose analytic top-`k` share equals `target`.
pub fn calibrate_skew(target: f64, k: u32, n_active: u32) -> Result<f64> {
    const LO: f64 = 0.0;
    const HI: f64 = 5.0;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::field("workload.skew_target_share", "must be in (0,1)"));
    }
    if k == 0 || k >= n_active {
        return Err(Error::field(
            "workload.skew_top_k",
            format!("must be in 1..{n_active}"),
        ));
    }
    let (s_lo, s_hi) = (zipf_top_k_share(LO, k, n_active), zipf_top_k_share(HI, k, n_active));
    if target < s_lo - 1e-12 || target > s_hi {
        return Err(Error::Config(format!(
            "top-{k} share {target} unreachable for exponents in [{LO},{HI}] (range {s_lo:.6}..{s_hi:.6})"
        )));
    }
    let (mut lo, mut hi) = (LO, HI);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if zipf_top_k_share(mid, k, n_active) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Unbounded synthetic request stream.
#[derive(Debug, Clone)]
pub struct SyntheticWorkload {
    cdf: Vec<f64>,
    rank_to_track: Vec<u32>,
    mix: OpMix,
    interarrival_us: Exp<f64>,
    last_us: Option<u64>,
    rng: RngStream,
}

/// Build the generator. Draws the rank→track permutation first, then
/// arrivals/ranks/ops lazily as the iterator is pulled.
pub fn gen_synthetic(cfg: &WorkloadConfig, mut rng: RngStream) -> Result<SyntheticWorkload> {
    cfg.validate()?;
    let n = cfg.n_active as usize;
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for r in 1..=n {
        acc += (r as f64).powf(-cfg.zipf_exponent);
        cdf.push(acc);
    }
    for c in &mut cdf {
        *c /= acc;
    }
    let rank_to_track: Vec<u32> = index::sample(&mut rng, cfg.n_tracks as usize, n)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let mean_us = cfg.mean_interarrival.as_ns() as f64 / SimTime::NS_PER_US as f64;
    let interarrival_us = Exp::new(1.0 / mean_us)
        .map_err(|e| Error::field("workload.mean_interarrival_ms", e.to_string()))?;
    Ok(SyntheticWorkload {
        cdf,
        rank_to_track,
        mix: cfg.mix,
        interarrival_us,
        last_us: None,
        rng,
    })
}

impl SyntheticWorkload {
    /// Track id served by popularity rank `rank` (0 = most popular).
    pub fn track_at_rank(&self, rank: usize) -> u32 {
        self.rank_to_track[rank]
    }
}

impl Iterator for SyntheticWorkload {
    type Item = TrackRequest;

    fn next(&mut self) -> Option<TrackRequest> {
        let gap = self.interarrival_us.sample(&mut self.rng).round() as u64;
        let t_us = match self.last_us {
            None => gap,
            Some(prev) => prev + gap.max(1),
        };
        self.last_us = Some(t_us);
        let u: f64 = self.rng.random();
        let rank = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        let op = self.mix.pick(self.rng.random());
        Some(TrackRequest {
            arrival: SimTime::from_us(t_us),
            track: self.rank_to_track[rank],
            op,
        })
    }
}

/// Streaming reader for the `t_us,track,op` trace format.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    n_tracks: u32,
    last_us: Option<u64>,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R, n_tracks: u32) -> Self {
        TraceReader {
            lines: reader.lines(),
            line_no: 0,
            n_tracks,
            last_us: None,
        }
    }

    fn parse(&mut self, line: &str) -> Result<TrackRequest> {
        let bad = |msg: String| Error::Trace {
            line: self.line_no,
            msg,
        };
        let mut fields = line.split(',').map(str::trim);
        let (Some(t), Some(track), Some(op), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad(format!("expected 3 fields, got `{line}`")));
        };
        let t_us: u64 = t.parse().map_err(|_| bad(format!("bad t_us `{t}`")))?;
        let track: u32 = track.parse().map_err(|_| bad(format!("bad track `{track}`")))?;
        let op: Op = op.parse().map_err(bad)?;
        if track >= self.n_tracks {
            return Err(bad(format!("track {track} out of range (< {})", self.n_tracks)));
        }
        if let Some(prev) = self.last_us {
            if t_us < prev {
                return Err(bad(format!("timestamp {t_us} precedes {prev}")));
            }
        }
        self.last_us = Some(t_us);
        Ok(TrackRequest {
            arrival: SimTime::from_us(t_us),
            track,
            op,
        })
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TrackRequest>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(Error::Trace {
                        line: self.line_no + 1,
                        msg: e.to_string(),
                    }))
                }
            };
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || (self.line_no == 1 && trimmed == TRACE_HEADER) {
                continue;
            }
            return Some(self.parse(trimmed));
        }
    }
}

pub fn open_trace(path: &Path, n_tracks: u32) -> Result<TraceReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(TraceReader::new(BufReader::new(f), n_tracks))
}

/// Read a whole trace into memory.
pub fn load_trace(path: &Path, n_tracks: u32) -> Result<Vec<TrackRequest>> {
    open_trace(path, n_tracks)?.collect()
}

/// Write requests in trace format; arrivals are truncated to whole µs.
pub fn write_trace<W: Write>(mut out: W, reqs: impl IntoIterator<Item = TrackRequest>) -> std::io::Result<u64> {
    writeln!(out, "{TRACE_HEADER}")?;
    let mut n = 0;
    for r in reqs {
        writeln!(out, "{},{},{}", r.arrival.as_ns() / SimTime::NS_PER_US, r.track, r.op)?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

#[derive(Debug, Clone, Default)]
pub struct WorkloadStats {
    pub total: u64,
    pub per_track: HashMap<u32, u64>,
    pub reads: u64,
    pub fast_writes: u64,
    pub write_throughs: u64,
    /// Interarrival histogram in 1 ms bins.
    pub interarrival_ms_hist: Vec<u64>,
    pub mean_interarrival: Option<f64>,
}

impl WorkloadStats {
    pub fn top_k_share(&self, k: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let mut counts: Vec<u64> = self.per_track.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        counts.iter().take(k).sum::<u64>() as f64 / self.total as f64
    }

    pub fn mix_fractions(&self) -> (f64, f64, f64) {
        if self.total == 0 {
            return (0.0, 0.0, 0.0);
        }
        let t = self.total as f64;
        (
            self.reads as f64 / t,
            self.fast_writes as f64 / t,
            self.write_throughs as f64 / t,
        )
    }

    /// Mean interarrival in milliseconds.
    pub fn mean_interarrival_ms(&self) -> Option<f64> {
        self.mean_interarrival
    }
}

pub fn stats(reqs: impl IntoIterator<Item = TrackRequest>) -> WorkloadStats {
    let mut st = WorkloadStats::default();
    let mut prev: Option<SimTime> = None;
    let mut gaps_ns: u128 = 0;
    let mut n_gaps = 0u64;
    for r in reqs {
        st.total += 1;
        *st.per_track.entry(r.track).or_default() += 1;
        match r.op {
            Op::Read => st.reads += 1,
            Op::FastWrite => st.fast_writes += 1,
            Op::WriteThrough => st.write_throughs += 1,
        }
        if let Some(p) = prev {
            let gap = r.arrival.saturating_sub(p);
            gaps_ns += gap.as_ns() as u128;
            n_gaps += 1;
            let bin = (gap.as_ns() / SimTime::NS_PER_MS) as usize;
            if st.interarrival_ms_hist.len() <= bin {
                st.interarrival_ms_hist.resize(bin + 1, 0);
            }
            st.interarrival_ms_hist[bin] += 1;
        }
        prev = Some(r.arrival);
    }
    if n_gaps > 0 {
        st.mean_interarrival = Some(gaps_ns as f64 / n_gaps as f64 / SimTime::NS_PER_MS as f64);
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn small_cfg() -> WorkloadConfig {
        WorkloadConfig {
            n_tracks: 4_800,
            n_active: 1_270,
            zipf_exponent: 1.1686645212896982,
            ..WorkloadConfig::default()
        }
    }

    #[test]
    fn single_line_without_header() {
        let r = TraceReader::new("0,42,R\n".as_bytes(), 100);
        let v: Vec<_> = r.collect::<Result<_>>().unwrap();
        assert_eq!(
            v,
            vec![TrackRequest {
                arrival: SimTime::ZERO,
                track: 42,
                op: Op::Read
            }]
        );
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let r = TraceReader::new("t_us,track,op\n10,1,R\n5,1,R\n".as_bytes(), 100);
        let err = r.collect::<Result<Vec<_>>>().unwrap_err();
        assert!(matches!(err, Error::Trace { line: 3, .. }), "{err}");
    }

    #[test]
    fn out_of_range_track_and_malformed_lines_rejected() {
        let e = TraceReader::new("1,100,R\n".as_bytes(), 100).collect::<Result<Vec<_>>>();
        assert!(matches!(e, Err(Error::Trace { line: 1, .. })));
        let e = TraceReader::new("1,2\n".as_bytes(), 100).collect::<Result<Vec<_>>>();
        assert!(matches!(e, Err(Error::Trace { line: 1, .. })));
        let e = TraceReader::new("1,2,XX\n".as_bytes(), 100).collect::<Result<Vec<_>>>();
        assert!(e.is_err());
    }

    #[test]
    fn equal_timestamps_are_allowed() {
        let v: Vec<_> = TraceReader::new("5,1,R\n5,2,FW\n".as_bytes(), 10)
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn synthetic_round_trips_through_trace_format() {
        let cfg = small_cfg();
        let reqs: Vec<_> = gen_synthetic(&cfg, RngStream::derive(11, "w")).unwrap().take(5_000).collect();
        let mut buf = Vec::new();
        write_trace(&mut buf, reqs.iter().copied()).unwrap();
        let back: Vec<_> = TraceReader::new(buf.as_slice(), cfg.n_tracks)
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(back, reqs);
    }

    #[test]
    fn single_active_track_gets_every_request() {
        let cfg = WorkloadConfig {
            n_active: 1,
            ..small_cfg()
        };
        let reqs: Vec<_> = gen_synthetic(&cfg, RngStream::derive(1, "w")).unwrap().take(1000).collect();
        let first = reqs[0].track;
        assert!(reqs.iter().all(|r| r.track == first));
    }

    #[test]
    fn arrivals_strictly_increase() {
        let cfg = WorkloadConfig {
            mean_interarrival: SimTime::from_us(2),
            ..small_cfg()
        };
        let reqs: Vec<_> = gen_synthetic(&cfg, RngStream::derive(4, "w")).unwrap().take(20_000).collect();
        assert!(reqs.windows(2).all(|w| w[0].arrival < w[1].arrival));
    }

    #[test]
    fn rank_mapping_is_injective() {
        let g = gen_synthetic(&small_cfg(), RngStream::derive(2, "w")).unwrap();
        let ids: HashSet<u32> = (0..1270).map(|r| g.track_at_rank(r)).collect();
        assert_eq!(ids.len(), 1270);
        assert!(ids.iter().all(|&t| t < 4_800));
    }

    #[test]
    fn empty_stats_are_zero() {
        let st = stats(std::iter::empty());
        assert_eq!(st.total, 0);
        assert_eq!(st.top_k_share(100), 0.0);
        assert_eq!(st.mix_fractions(), (0.0, 0.0, 0.0));
        assert!(st.mean_interarrival_ms().is_none());
    }

    // Frozen from an independent numpy bisection over exact partial sums.
    #[test]
    fn calibrated_exponents_match_reference() {
        let s = calibrate_skew(0.8, 100, 127_000).unwrap();
        assert!((s - 1.2914511457560587).abs() < 1e-6, "{s}");
        let s = calibrate_skew(0.8, 100, 1_270).unwrap();
        assert!((s - 1.1686645212896982).abs() < 1e-6, "{s}");
    }

    #[test]
    fn uniform_target_gives_exponent_near_zero() {
        let s = calibrate_skew(100.0 / 127_000.0, 100, 127_000).unwrap();
        assert!(s < 1e-3, "{s}");
    }

    #[test]
    fn unreachable_target_is_an_error() {
        assert!(calibrate_skew(0.5 / 127_000.0, 100, 127_000).is_err());
        assert!(calibrate_skew(0.8, 200, 200).is_err());
    }

    #[test]
    fn mix_validation() {
        let mut cfg = small_cfg();
        cfg.mix.read = 0.9;
        assert!(cfg.validate().is_err());
        cfg.mix = OpMix::default();
        cfg.n_active = cfg.n_tracks + 1;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn near_total_share_is_reachable(n in 2u32..900) {
            let s = calibrate_skew(0.999, n - 1, n).unwrap();
            prop_assert!((zipf_top_k_share(s, n - 1, n) - 0.999).abs() < 0.02);
        }

        #[test]
        fn calibration_hits_target(target in 0.2f64..0.95) {
            let s = calibrate_skew(target, 100, 1_270).unwrap();
            prop_assert!((zipf_top_k_share(s, 100, 1_270) - target).abs() < 1e-6);
        }
    }
}
