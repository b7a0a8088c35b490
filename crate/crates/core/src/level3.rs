//! Symbol-level track transfer under transient faults, and the burst-size
//! tables handed to the Level 2 model.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::codes::{Geometry, Location, Scope, SymbolErrors};
use crate::error::{Error, Result};
use crate::kernel::{RngStream, SimTime};

pub const BURST_TABLE_HEADER: &str = "location,bits,probability";

/// Places where a transient fault corrupts data in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    Bus1,
    Bus2,
    CciMem,
    CciChan,
}

impl Site {
    pub const ALL: [Site; 4] = [Site::Bus1, Site::Bus2, Site::CciMem, Site::CciChan];

    pub fn name(self) -> &'static str {
        match self {
            Site::Bus1 => "BUS1",
            Site::Bus2 => "BUS2",
            Site::CciMem => "CCI_MEM",
            Site::CciChan => "CCI_CHAN",
        }
    }

    pub fn location(self) -> Location {
        match self {
            Site::Bus1 => Location::Bus1,
            Site::Bus2 => Location::Bus2,
            Site::CciMem => Location::CciMem,
            Site::CciChan => Location::CciChan,
        }
    }

    pub fn is_bus(self) -> bool {
        matches!(self, Site::Bus1 | Site::Bus2)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Site {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Site::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::BurstTable(format!("unknown location `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferPath {
    HostToCache,
    CacheToHost,
    DiskToCache,
    CacheToDisk,
}

impl TransferPath {
    /// Sites traversed, in order.
    pub fn stages(self) -> [Site; 4] {
        match self {
            TransferPath::HostToCache | TransferPath::DiskToCache => {
                [Site::CciChan, Site::Bus1, Site::CciMem, Site::Bus2]
            }
            TransferPath::CacheToHost | TransferPath::CacheToDisk => {
                [Site::Bus2, Site::CciMem, Site::Bus1, Site::CciChan]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTiming {
    pub bus1_ns_per_symbol: u64,
    pub bus2_ns_per_symbol: u64,
    pub cci_mem_residency_ns: u64,
    pub cci_chan_residency_ns: u64,
}

impl Default for StageTiming {
    fn default() -> Self {
        StageTiming {
            bus1_ns_per_symbol: 10,
            bus2_ns_per_symbol: 10,
            cci_mem_residency_ns: 10_240,
            cci_chan_residency_ns: 10_240,
        }
    }
}

impl StageTiming {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("level3.bus1_ns_per_symbol", self.bus1_ns_per_symbol),
            ("level3.bus2_ns_per_symbol", self.bus2_ns_per_symbol),
            ("level3.cci_mem_residency_ns", self.cci_mem_residency_ns),
            ("level3.cci_chan_residency_ns", self.cci_chan_residency_ns),
        ] {
            if v == 0 {
                return Err(Error::field(k, "must be positive"));
            }
        }
        Ok(())
    }

    /// Time the track spends at `site`.
    pub fn stage_ns(&self, site: Site, geom: Geometry) -> u64 {
        let n = geom.symbols_per_record as u64;
        match site {
            Site::Bus1 => n * self.bus1_ns_per_symbol,
            Site::Bus2 => n * self.bus2_ns_per_symbol,
            Site::CciMem => self.cci_mem_residency_ns,
            Site::CciChan => self.cci_chan_residency_ns,
        }
    }

    fn ns_per_symbol(&self, site: Site) -> Option<u64> {
        match site {
            Site::Bus1 => Some(self.bus1_ns_per_symbol),
            Site::Bus2 => Some(self.bus2_ns_per_symbol),
            _ => None,
        }
    }

    /// Whole-path duration.
    pub fn path_ns(&self, path: TransferPath, geom: Geometry) -> u64 {
        path.stages().iter().map(|&s| self.stage_ns(s, geom)).sum()
    }
}

/// Mean per-symbol flip counts while a fault is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub bus1: f64,
    pub bus2: f64,
    pub cci_mem: f64,
    pub cci_chan: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            bus1: 0.2,
            bus2: 0.2,
            cci_mem: 0.78,
            cci_chan: 0.98,
        }
    }
}

impl Lambdas {
    pub fn get(&self, site: Site) -> f64 {
        match site {
            Site::Bus1 => self.bus1,
            Site::Bus2 => self.bus2,
            Site::CciMem => self.cci_mem,
            Site::CciChan => self.cci_chan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientFault {
    /// Offset from the start of the transfer.
    pub start: SimTime,
    pub duration: SimTime,
    pub site: Site,
    pub lambda: f64,
}

/// Flips injected at one stage, with the mechanisms that can see them.
#[derive(Debug, Clone, PartialEq)]
pub struct StageErrors {
    pub site: Site,
    pub scope: Scope,
    pub errors: SymbolErrors,
}

/// Push one track through `path`. Busses move one symbol per slot, so a
/// symbol is hit when its slot starts inside the fault window; interfaces hold
/// the whole track for their residency, so every symbol is hit when the fault
/// overlaps it.
pub fn simulate_track_transfer<R: Rng + ?Sized>(
    path: TransferPath,
    faults: &[TransientFault],
    timing: &StageTiming,
    geom: Geometry,
    rng: &mut R,
) -> Vec<StageErrors> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for site in path.stages() {
        let len = timing.stage_ns(site, geom);
        let mut errors = SymbolErrors::new();
        for f in faults.iter().filter(|f| f.site == site) {
            let (fs, fe) = (f.start.as_ns(), f.start.as_ns() + f.duration.as_ns());
            if fe <= offset || fs >= offset + len {
                continue;
            }
            let Ok(pois) = Poisson::new(f.lambda) else {
                continue;
            };
            let hit: Box<dyn Iterator<Item = u16>> = match timing.ns_per_symbol(site) {
                Some(c) => Box::new(
                    (0..geom.symbols_per_record)
                        .filter(move |&i| (fs..fe).contains(&(offset + i as u64 * c))),
                ),
                None => Box::new(0..geom.symbols_per_record),
            };
            for sym in hit {
                let k = pois.sample(rng).min(geom.bits_per_symbol as f64) as u16;
                errors.add(geom, sym, k);
            }
        }
        out.push(StageErrors {
            site,
            scope: Scope::for_location(site.location()),
            errors,
        });
        offset += len;
    }
    out
}

/// Expected symbols touched by one fault of length `fault_ns` at `site`.
pub fn expected_symbols_exposed(site: Site, timing: &StageTiming, fault_ns: u64, geom: Geometry) -> f64 {
    let n = geom.symbols_per_record as f64;
    match timing.ns_per_symbol(site) {
        Some(c) => n.min(fault_ns as f64 / c as f64),
        None => n,
    }
}

pub fn calibrate_lambda(
    site: Site,
    target_mean_bits: f64,
    timing: &StageTiming,
    fault_ns: u64,
    geom: Geometry,
) -> Result<f64> {
    if target_mean_bits.is_nan() || target_mean_bits <= 0.0 {
        return Err(Error::Config(format!("target mean {target_mean_bits} must be positive")));
    }
    let lambda = target_mean_bits / expected_symbols_exposed(site, timing, fault_ns, geom);
    if lambda > geom.bits_per_symbol as f64 {
        return Err(Error::Config(format!(
            "target {target_mean_bits} at {site} needs λ={lambda:.3} > {} bits per symbol",
            geom.bits_per_symbol
        )));
    }
    Ok(lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstSummary {
    pub site: Site,
    /// `(bits, probability)` with distinct ascending `bits`.
    pub pdf: Vec<(u32, f64)>,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// Raw per-trial totals, kept for distribution tests.
    pub samples: Vec<u32>,
}

/// Run `n_trials` single-fault transfers through `site` and tabulate the
/// total flips per transfer. The fault start is uniform over the positions
/// that keep the whole fault inside the stage.
pub fn estimate_burst_pdf<R: Rng + ?Sized>(
    site: Site,
    n_trials: usize,
    timing: &StageTiming,
    lambda: f64,
    fault_ns: u64,
    geom: Geometry,
    rng: &mut R,
) -> Result<BurstSummary> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::field(format!("level3.lambda_{}", site.name().to_lowercase()), "must be > 0"));
    }
    let path = TransferPath::HostToCache;
    let stage_offset: u64 = path
        .stages()
        .iter()
        .take_while(|&&s| s != site)
        .map(|&s| timing.stage_ns(s, geom))
        .sum();
    let slack = timing.stage_ns(site, geom).saturating_sub(fault_ns);
    let mut samples = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let start = stage_offset + rng.random_range(0..=slack);
        let fault = TransientFault {
            start: SimTime::from_ns(start),
            duration: SimTime::from_ns(fault_ns),
            site,
            lambda,
        };
        let stages = simulate_track_transfer(path, &[fault], timing, geom, rng);
        samples.push(stages.iter().map(|s| s.errors.total_bits() as u32).sum());
    }
    Ok(summarize(site, samples))
}

fn summarize(site: Site, samples: Vec<u32>) -> BurstSummary {
    let n = samples.len();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &s in &samples {
        *counts.entry(s).or_default() += 1;
    }
    let pdf = counts.into_iter().map(|(b, c)| (b, c as f64 / n as f64)).collect();
    let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    let var = if n > 1 {
        samples.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    BurstSummary {
        site,
        pdf,
        mean,
        sd: var.sqrt(),
        n,
        samples,
    }
}

/// Per-site discrete burst-size distributions, sampled by inverse CDF.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BurstTable {
    tables: BTreeMap<Site, (Vec<u32>, Vec<f64>)>,
}

impl BurstTable {
    pub fn insert(&mut self, site: Site, pdf: &[(u32, f64)]) -> Result<()> {
        if pdf.is_empty() {
            return Err(Error::BurstTable(format!("{site}: empty distribution")));
        }
        let mut bits = Vec::with_capacity(pdf.len());
        let mut cdf = Vec::with_capacity(pdf.len());
        let mut acc = 0.0;
        for &(b, p) in pdf {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::BurstTable(format!("{site}: probability {p} outside [0,1]")));
            }
            acc += p;
            bits.push(b);
            cdf.push(acc);
        }
        if (acc - 1.0).abs() > 1e-6 {
            return Err(Error::BurstTable(format!("{site}: probabilities sum to {acc}")));
        }
        self.tables.insert(site, (bits, cdf));
        Ok(())
    }

    pub fn from_summaries(summaries: &[BurstSummary]) -> Result<Self> {
        let mut t = BurstTable::default();
        for s in summaries {
            t.insert(s.site, &s.pdf)?;
        }
        Ok(t)
    }

    pub fn has(&self, site: Site) -> bool {
        self.tables.contains_key(&site)
    }

    /// Every site present, or a missing-input error naming the first gap.
    pub fn require_all(&self) -> Result<()> {
        match Site::ALL.into_iter().find(|s| !self.has(*s)) {
            Some(s) => Err(Error::MissingInput(format!("burst table has no rows for {s}"))),
            None => Ok(()),
        }
    }

    pub fn mean(&self, site: Site) -> Option<f64> {
        let (bits, cdf) = self.tables.get(&site)?;
        let mut prev = 0.0;
        Some(
            bits.iter()
                .zip(cdf)
                .map(|(&b, &c)| {
                    let p = c - prev;
                    prev = c;
                    b as f64 * p
                })
                .sum(),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, site: Site, rng: &mut R) -> Option<u32> {
        let (bits, cdf) = self.tables.get(&site)?;
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let i = cdf.partition_point(|&c| c <= u).min(bits.len() - 1);
        Some(bits[i])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{BURST_TABLE_HEADER}")?;
        for (site, (bits, cdf)) in &self.tables {
            let mut prev = 0.0;
            for (b, c) in bits.iter().zip(cdf) {
                writeln!(out, "{},{},{}", site, b, c - prev)?;
                prev = *c;
            }
        }
        out.flush()
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: BTreeMap<Site, Vec<(u32, f64)>> = BTreeMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::BurstTable(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line == BURST_TABLE_HEADER) {
                continue;
            }
            let bad = |m: &str| Error::BurstTable(format!("line {}: {m}: `{line}`", i + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad("expected 3 fields"));
            }
            let site: Site = f[0].parse()?;
            let bits: u32 = f[1].parse().map_err(|_| bad("bad bit count"))?;
            let p: f64 = f[2].parse().map_err(|_| bad("bad probability"))?;
            rows.entry(site).or_default().push((bits, p));
        }
        let mut t = BurstTable::default();
        for (site, mut pdf) in rows {
            pdf.sort_by_key(|&(b, _)| b);
            t.insert(site, &pdf)?;
        }
        Ok(t)
    }
}

/// Burst estimates for all four sites. Each site draws from its own
/// substream of `rng`, so adding or reordering sites does not shift others.
pub fn calibrate_all(
    n_trials: usize,
    timing: &StageTiming,
    lambdas: &Lambdas,
    fault_ns: u64,
    geom: Geometry,
    seed: u64,
    rng: &RngStream,
) -> Result<Vec<BurstSummary>> {
    timing.validate()?;
    Site::ALL
        .iter()
        .enumerate()
        .map(|(i, &site)| {
            let mut r = rng.substream(seed, i as u64);
            estimate_burst_pdf(site, n_trials, timing, lambdas.get(site), fault_ns, geom, &mut r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: u64 = 5_000;

    fn g() -> Geometry {
        Geometry::default()
    }

    #[test]
    fn no_faults_no_flips() {
        let mut rng = RngStream::derive(0, "l3");
        let st = simulate_track_transfer(TransferPath::CacheToDisk, &[], &StageTiming::default(), g(), &mut rng);
        assert_eq!(st.len(), 4);
        assert!(st.iter().all(|s| s.errors.is_empty()));
    }

    #[test]
    fn bus1_fault_exposes_500_symbols() {
        let timing = StageTiming::default();
        // Bus 1 follows the channel interface on the inbound path.
        let fault = TransientFault {
            start: SimTime::from_ns(timing.cci_chan_residency_ns + 1_234),
            duration: SimTime::from_ns(D),
            site: Site::Bus1,
            lambda: 200.0,
        };
        let mut rng = RngStream::derive(0, "l3");
        let st = simulate_track_transfer(TransferPath::HostToCache, &[fault], &timing, g(), &mut rng);
        let bus1 = st.iter().find(|s| s.site == Site::Bus1).unwrap();
        assert_eq!(bus1.errors.symbols_in_error(), 500);
        assert_eq!(bus1.scope, Scope::PARITY | Scope::FE);
        assert!(st.iter().filter(|s| s.site != Site::Bus1).all(|s| s.errors.is_empty()));
    }

    #[test]
    fn interface_fault_exposes_whole_track() {
        let fault = TransientFault {
            start: SimTime::ZERO,
            duration: SimTime::from_ns(D),
            site: Site::CciChan,
            lambda: 50.0,
        };
        let mut rng = RngStream::derive(0, "l3");
        let st = simulate_track_transfer(TransferPath::HostToCache, &[fault], &StageTiming::default(), g(), &mut rng);
        assert_eq!(st[0].errors.symbols_in_error(), 1024);
        assert_eq!(st[0].scope, Scope::FE);
    }

    #[test]
    fn flips_are_capped_per_symbol() {
        let fault = TransientFault {
            start: SimTime::ZERO,
            duration: SimTime::from_ns(D),
            site: Site::CciChan,
            lambda: 1_000.0,
        };
        let mut rng = RngStream::derive(0, "l3");
        let st = simulate_track_transfer(TransferPath::HostToCache, &[fault], &StageTiming::default(), g(), &mut rng);
        assert!(st[0].errors.iter().all(|(_, c)| c == 256));
    }

    #[test]
    fn calibrate_lambda_closed_forms() {
        let t = StageTiming::default();
        assert!((calibrate_lambda(Site::Bus1, 100.0, &t, D, g()).unwrap() - 0.2).abs() < 1e-12);
        let l = calibrate_lambda(Site::CciChan, 1000.0, &t, D, g()).unwrap();
        assert!((l - 1000.0 / 1024.0).abs() < 1e-12);
        assert!(calibrate_lambda(Site::Bus1, 0.0, &t, D, g()).is_err());
        assert!(calibrate_lambda(Site::Bus1, 1e6, &t, D, g()).is_err());
    }

    #[test]
    fn single_trial_is_point_mass() {
        let mut rng = RngStream::derive(5, "l3");
        let s = estimate_burst_pdf(Site::Bus2, 1, &StageTiming::default(), 0.2, D, g(), &mut rng).unwrap();
        assert_eq!(s.pdf.len(), 1);
        assert_eq!(s.pdf[0].1, 1.0);
        assert_eq!(s.sd, 0.0);
    }

    #[test]
    fn calibrated_lambda_reproduces_target_mean() {
        let t = StageTiming::default();
        for (site, target) in [(Site::Bus1, 100.0), (Site::CciMem, 800.0)] {
            let l = calibrate_lambda(site, target, &t, D, g()).unwrap();
            let mut rng = RngStream::derive(9, site.name());
            let s = estimate_burst_pdf(site, 2_000, &t, l, D, g(), &mut rng).unwrap();
            assert!((s.mean / target - 1.0).abs() < 0.05, "{site}: {}", s.mean);
        }
    }

    #[test]
    fn conditional_mean_within_three_standard_errors() {
        let t = StageTiming::default();
        let mut rng = RngStream::derive(13, "l3.se");
        let s = estimate_burst_pdf(Site::Bus1, 10_000, &t, 0.2, D, g(), &mut rng).unwrap();
        let expect = 0.2 * 500.0;
        let se = s.sd / (s.n as f64).sqrt();
        assert!((s.mean - expect).abs() < 3.0 * se, "mean {} se {se}", s.mean);
    }

    #[test]
    fn burst_table_csv_round_trip_and_sampling() {
        let mut t = BurstTable::default();
        t.insert(Site::Bus1, &[(90, 0.25), (100, 0.5), (110, 0.25)]).unwrap();
        t.insert(Site::CciChan, &[(1000, 1.0)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = BurstTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.mean(Site::Bus1), Some(100.0));
        let mut rng = RngStream::derive(1, "bt");
        assert_eq!(t.sample(Site::CciChan, &mut rng), Some(1000));
        assert_eq!(t.sample(Site::Bus2, &mut rng), None);
        assert!(t.require_all().is_err());
    }

    #[test]
    fn burst_table_rejects_bad_input() {
        assert!(BurstTable::read_csv("location,bits,probability\nBUS9,1,1\n".as_bytes()).is_err());
        assert!(BurstTable::read_csv("BUS1,1,0.5\n".as_bytes()).is_err());
        assert!(BurstTable::read_csv("BUS1,x,1\n".as_bytes()).is_err());
    }
}
