//! Coverage counters, latency histograms, windowed accumulation series, and
//! the CSV/JSON exports built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use crate::codes::{CheckOutcome, Mechanism, Status};
use crate::error::{Error, Result};
use crate::kernel::SimTime;
use crate::level2::ledger::{Disposition, Origin, RecordStore};
use crate::level2::OutcomeClass;

/// Latency histogram bucket width.
pub const BUCKET_NS: u64 = 100_000;

/// Histogram series in export order.
pub const LATENCY_SERIES: [&str; 8] = ["CCI", "CCI_CHAN", "CCI_MEM", "CM", "D", "B1", "B2", "ALL"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoverageUnit {
    /// Parity and EDAC count data symbols; CRCs count records.
    #[default]
    Symbol,
    /// Every mechanism counts whole checks.
    Check,
}

impl CoverageUnit {
    pub fn name(self) -> &'static str {
        match self {
            CoverageUnit::Symbol => "symbol",
            CoverageUnit::Check => "check",
        }
    }
}

impl FromStr for CoverageUnit {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "symbol" => Ok(CoverageUnit::Symbol),
            "check" => Ok(CoverageUnit::Check),
            o => Err(format!("`{o}` is not symbol|check")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoverageCounter {
    pub checked: u64,
    pub detected: u64,
    pub corrected: u64,
    pub missed: u64,
}

impl CoverageCounter {
    pub fn coverage(&self) -> Option<f64> {
        (self.checked > 0).then(|| self.detected as f64 / self.checked as f64)
    }

    pub fn merge(&mut self, o: &CoverageCounter) {
        self.checked += o.checked;
        self.detected += o.detected;
        self.corrected += o.corrected;
        self.missed += o.missed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySample {
    pub origin: Origin,
    pub disposition: Disposition,
    pub latency_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSnapshot {
    pub index: u64,
    pub end: SimTime,
    pub cache_fraction: f64,
    pub disk_fraction: f64,
    pub dirty_fraction: f64,
    pub reconstructions: u64,
    /// Cumulative coverage at the window close, by `Mechanism::index`.
    pub coverage: [CoverageCounter; 4],
}

/// Totals over a window used by [`Metrics::snapshot_window`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Occupancy {
    pub residents: u64,
    pub faulty_residents: u64,
    pub capacity: u64,
    pub dirty: u64,
    pub total_tracks: u64,
    pub faulty_disk_tracks: u64,
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub unit: CoverageUnit,
    pub window_len: SimTime,
    pub coverage: [CoverageCounter; 4],
    pub latency: Vec<LatencySample>,
    pub windows: Vec<WindowSnapshot>,
    pub reconstructions: u64,
    recon_window: u64,
    pub outcomes: BTreeMap<OutcomeClass, u64>,
    pub crc_escapes: u64,
    pub data_loss: Vec<SimTime>,
    pub hits: u64,
    pub misses: u64,
    pub recoveries: BTreeMap<&'static str, u64>,
    pub flushed: u64,
    pub unavailable_ns: u64,
    pub injections: BTreeMap<&'static str, u64>,
}

impl Metrics {
    pub fn new(unit: CoverageUnit, window_len: SimTime) -> Self {
        Metrics {
            unit,
            window_len,
            coverage: Default::default(),
            latency: Vec::new(),
            windows: Vec::new(),
            reconstructions: 0,
            recon_window: 0,
            outcomes: BTreeMap::new(),
            crc_escapes: 0,
            data_loss: Vec::new(),
            hits: 0,
            misses: 0,
            recoveries: BTreeMap::new(),
            flushed: 0,
            unavailable_ns: 0,
            injections: BTreeMap::new(),
        }
    }

    /// Count one check that saw at least one in-scope error.
    pub fn on_check(&mut self, m: Mechanism, out: &CheckOutcome) {
        if out.status == Status::Clean {
            return;
        }
        let c = &mut self.coverage[m.index()];
        let per_symbol = self.unit == CoverageUnit::Symbol && matches!(m, Mechanism::Parity | Mechanism::Edac);
        if per_symbol {
            let n = out.corrected_symbols + out.detected_symbols + out.missed_symbols;
            c.checked += n as u64;
            c.detected += (out.detected_symbols + out.corrected_symbols) as u64;
            c.corrected += out.corrected_symbols as u64;
            c.missed += out.missed_symbols as u64;
        } else {
            c.checked += 1;
            match out.status {
                Status::Missed => c.missed += 1,
                Status::Corrected => {
                    c.detected += 1;
                    c.corrected += 1;
                }
                _ => c.detected += 1,
            }
        }
    }

    pub fn on_resolve(&mut self, origin: Origin, disposition: Disposition, latency_ns: u64) {
        assert_ne!(disposition, Disposition::Pending, "resolve to PENDING");
        self.latency.push(LatencySample {
            origin,
            disposition,
            latency_ns,
        });
    }

    pub fn on_outcome(&mut self, o: OutcomeClass) {
        *self.outcomes.entry(o).or_default() += 1;
    }

    pub fn on_reconstruct(&mut self, tracks: u64) {
        self.reconstructions += tracks;
        self.recon_window += tracks;
    }

    pub fn on_injection(&mut self, kind: &'static str) {
        *self.injections.entry(kind).or_default() += 1;
    }

    pub fn on_recovery(&mut self, source: &'static str) {
        *self.recoveries.entry(source).or_default() += 1;
    }

    pub fn snapshot_window(&mut self, end: SimTime, occ: Occupancy) {
        let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        self.windows.push(WindowSnapshot {
            index: self.windows.len() as u64 + 1,
            end,
            cache_fraction: frac(occ.faulty_residents, occ.residents),
            disk_fraction: frac(occ.faulty_disk_tracks, occ.total_tracks),
            dirty_fraction: frac(occ.dirty, occ.capacity),
            reconstructions: self.recon_window,
            coverage: self.coverage,
        });
        self.recon_window = 0;
    }

    pub fn total_requests(&self) -> u64 {
        self.outcomes.values().sum()
    }

    pub fn outcome_count(&self, o: OutcomeClass) -> u64 {
        self.outcomes.get(&o).copied().unwrap_or(0)
    }

    /// Outcome probabilities; an empty run counts as all-success.
    pub fn blackbox(&self) -> [f64; 4] {
        let n = self.total_requests();
        if n == 0 {
            return [1.0, 0.0, 0.0, 0.0];
        }
        OutcomeClass::ALL.map(|o| self.outcome_count(o) as f64 / n as f64)
    }

    /// Latency histogram: series name → bucket → count.
    pub fn histogram(&self) -> BTreeMap<&'static str, BTreeMap<u64, u64>> {
        let mut h: BTreeMap<&'static str, BTreeMap<u64, u64>> = BTreeMap::new();
        for s in &self.latency {
            let b = s.latency_ns / BUCKET_NS;
            let mut series = vec![s.origin.code6(), "ALL"];
            if s.origin.code5() != s.origin.code6() {
                series.push(s.origin.code5());
            }
            for name in series {
                *h.entry(name).or_default().entry(b).or_default() += 1;
            }
        }
        h
    }

    /// Latencies in ms for samples matching `pred`, sorted.
    pub fn latencies_ms(&self, pred: impl Fn(&LatencySample) -> bool) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .latency
            .iter()
            .filter(|s| pred(s))
            .map(|s| s.latency_ns as f64 / SimTime::NS_PER_MS as f64)
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Combined FE + PS coverage.
    pub fn crc_coverage(&self) -> CoverageCounter {
        let mut c = self.coverage[Mechanism::FeCrc.index()];
        c.merge(&self.coverage[Mechanism::PsCrc.index()]);
        c
    }

    pub fn export(&self, out_dir: &Path, records: &RecordStore, run: &RunInfo) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let write = |name: &str, body: String| {
            let p = out_dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        write("coverage.csv", self.coverage_csv())?;
        write("latency_hist.csv", self.latency_csv())?;
        write("faulty_fraction.csv", self.faulty_csv())?;
        write("reconstruction.csv", self.reconstruction_csv())?;
        let summary = self.summary(records, run)?;
        write("summary.json", serde_json::to_string_pretty(&summary)? + "\n")
    }

    pub fn coverage_csv(&self) -> String {
        let mut s = String::from("window,mechanism,checked,detected,corrected,missed,coverage\n");
        for w in &self.windows {
            for m in Mechanism::ALL {
                let c = w.coverage[m.index()];
                let cov = c.coverage().map_or("NA".to_string(), fmt_f);
                let _ = writeln!(s, "{},{},{},{},{},{},{}", w.index, m, c.checked, c.detected, c.corrected, c.missed, cov);
            }
        }
        s
    }

    pub fn latency_csv(&self) -> String {
        let mut s = String::from("origin,bucket_0p1ms,count\n");
        let h = self.histogram();
        for name in LATENCY_SERIES {
            if let Some(b) = h.get(name) {
                for (bucket, count) in b {
                    let _ = writeln!(s, "{name},{bucket},{count}");
                }
            }
        }
        s
    }

    pub fn faulty_csv(&self) -> String {
        let mut s = String::from("window,cache_fraction,disk_fraction,dirty_fraction\n");
        for w in &self.windows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                w.index,
                fmt_f(w.cache_fraction),
                fmt_f(w.disk_fraction),
                fmt_f(w.dirty_fraction)
            );
        }
        s
    }

    pub fn reconstruction_csv(&self) -> String {
        let mut s = String::from("window,count,rate_per_ms\n");
        let mut prev = SimTime::ZERO;
        for w in &self.windows {
            let ms = (w.end - prev).as_ms_f64();
            let rate = if ms > 0.0 { w.reconstructions as f64 / ms } else { 0.0 };
            let _ = writeln!(s, "{},{},{}", w.index, w.reconstructions, fmt_f(rate));
            prev = w.end;
        }
        s
    }

    pub fn summary(&self, records: &RecordStore, run: &RunInfo) -> Result<Value> {
        let resolved = self.latency.len();
        let pending = records.pending();
        if resolved + pending != records.len() {
            return Err(Error::Invariant(format!(
                "record conservation: {resolved} resolved + {pending} pending != {} injected",
                records.len()
            )));
        }
        let mut by_disp: Map<String, Value> = Map::new();
        for d in Disposition::ALL {
            by_disp.insert(d.name().into(), json!(records.iter().filter(|r| r.disposition == d).count()));
        }
        let mut by6: BTreeMap<&str, u64> = BTreeMap::new();
        let mut by5: BTreeMap<&str, u64> = BTreeMap::new();
        for r in records.iter() {
            *by6.entry(r.origin.code6()).or_default() += 1;
            *by5.entry(r.origin.code5()).or_default() += 1;
        }
        let mut cov = Map::new();
        let pooled = [("CRC", self.crc_coverage())];
        let each = Mechanism::ALL.map(|m| (m.name(), self.coverage[m.index()]));
        for (name, c) in each.into_iter().chain(pooled) {
            cov.insert(
                name.into(),
                json!({
                    "checked": c.checked, "detected": c.detected,
                    "corrected": c.corrected, "missed": c.missed,
                    "coverage": c.coverage(),
                }),
            );
        }
        let mut outcomes = Map::new();
        for o in OutcomeClass::ALL {
            outcomes.insert(o.name().into(), json!(self.outcome_count(o)));
        }
        let mut medians = Map::new();
        for name in LATENCY_SERIES {
            let v = self.latencies_ms(|s| name == "ALL" || s.origin.code6() == name || s.origin.code5() == name);
            medians.insert(name.into(), json!(crate::stats::percentile(&v, 0.5)));
        }
        let dur_ms = run.duration.as_ms_f64();
        let [ps, pd, pu, pa] = self.blackbox();
        Ok(json!({
            "profile": run.profile,
            "seed": run.seed,
            "duration_h": run.duration.as_hours_f64(),
            "windows": self.windows.len(),
            "p_success": ps,
            "p_detected_uncorrected": pd,
            "p_undetected": pu,
            "p_unavailable": pa,
            "requests": self.total_requests(),
            "outcomes": outcomes,
            "cache_hits": self.hits,
            "cache_misses": self.misses,
            "coverage_unit": self.unit.name(),
            "coverage": cov,
            "crc_escapes": self.crc_escapes,
            "records_total": records.len(),
            "records_pending": pending,
            "records_by_disposition": by_disp,
            "records_by_origin": by6,
            "records_by_origin_5code": by5,
            "injections": self.injections,
            "latency_median_ms": medians,
            "recoveries": self.recoveries,
            "tracks_flushed": self.flushed,
            "reconstructions": self.reconstructions,
            "mean_reconstruction_rate_per_ms": if dur_ms > 0.0 { self.reconstructions as f64 / dur_ms } else { 0.0 },
            "availability": if run.duration.as_ns() > 0 { 1.0 - self.unavailable_ns as f64 / run.duration.as_ns() as f64 } else { 1.0 },
            "data_loss_events": self.data_loss.len(),
            "time_to_first_data_loss_h": self.data_loss.first().map(|t| t.as_hours_f64()),
        }))
    }
}

/// Run-level facts written into `summary.json`.
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub profile: String,
    pub seed: u64,
    pub duration: SimTime,
}

fn fmt_f(x: f64) -> String {
    format!("{x:.9}")
}
