//! Controller operations: host reads and writes, staging, destaging,
//! write-back, eviction, error recovery, fault injection and component
//! failures. Every operation propagates error fragments between replica
//! ledgers and runs the checks that sit on its data path.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::codes::{crc_check, edac_check, parity_check, CheckOutcome, Geometry, Location, Mechanism, Scope, SymbolErrors};
use crate::error::{Error, Result};
use crate::kernel::{RngFactory, RngStream, SimTime};
use crate::level2::cache::CacheState;
use crate::level2::disks::DiskArrayState;
use crate::level2::faults::{FaultPlan, TransferModel};
use crate::level2::ledger::{records_in, view, Disposition, Fragment, Origin, RecordId, RecordStore, Replica};
use crate::level2::OutcomeClass;
use crate::level3::{BurstTable, Site, StageTiming};
use crate::metrics::{CoverageUnit, Metrics, Occupancy};
use crate::workload::Op;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub geometry: Geometry,
    pub n_tracks: u32,
    pub n_data_disks: u32,
    pub cache_capacity: u32,
    pub memory_cards: u32,
    pub cci_chan: u32,
    pub cci_mem: u32,
    /// Dirty fraction of capacity above which a write-back starts.
    pub dirty_threshold: f64,
    pub read_retries: u32,
    /// Chance that a retry clears a persistent stored error anyway.
    pub soft_retry_success: f64,
    pub edac_check_on_write: bool,
    /// Let cache-memory injections also land in NVM copies.
    pub nvm_stored_injection: bool,
    pub rebuild_per_track: SimTime,
    pub timing: StageTiming,
    pub faults: FaultPlan,
    pub coverage_unit: CoverageUnit,
    pub window_len: SimTime,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            geometry: Geometry::default(),
            n_tracks: 4_800,
            n_data_disks: 13,
            cache_capacity: 240,
            memory_cards: 4,
            cci_chan: 2,
            cci_mem: 2,
            dirty_threshold: 0.25,
            read_retries: 2,
            soft_retry_success: 0.0,
            edac_check_on_write: false,
            nvm_stored_injection: false,
            rebuild_per_track: SimTime::from_ms(10),
            timing: StageTiming::default(),
            faults: FaultPlan::default(),
            coverage_unit: CoverageUnit::Symbol,
            window_len: SimTime::from_secs(900),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tracks == 0 {
            return Err(Error::field("array.n_tracks", "must be > 0"));
        }
        if self.n_data_disks == 0 {
            return Err(Error::field("array.n_data_disks", "must be > 0"));
        }
        if self.cache_capacity > self.n_tracks {
            return Err(Error::field(
                "cache.capacity_tracks",
                format!("{} exceeds array size {}", self.cache_capacity, self.n_tracks),
            ));
        }
        if self.memory_cards == 0 || self.cci_chan == 0 || self.cci_mem == 0 {
            return Err(Error::field("cache.memory_cards", "cards and interfaces must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.dirty_threshold) {
            return Err(Error::field("cache.dirty_threshold", "outside [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.soft_retry_success) {
            return Err(Error::field("cache.soft_retry_success", "outside [0,1]"));
        }
        self.timing.validate()?;
        self.faults.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReplicaKind {
    Vm,
    Nvm,
    Disk,
}

/// Where a time-dependent storage fault lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoredTarget {
    CacheMemory,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Component {
    CciChan(u32),
    CciMem(u32),
    Card(u32),
    Disk(u32),
}

impl Component {
    pub fn name(self) -> String {
        match self {
            Component::CciChan(i) => format!("CCI_CHAN#{i}"),
            Component::CciMem(i) => format!("CCI_MEM#{i}"),
            Component::Card(i) => format!("CARD#{i}"),
            Component::Disk(i) => format!("DISK#{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recovery {
    /// Good data delivered from the named source; `escaped` when residual
    /// errors went to the host unseen.
    Recovered { source: &'static str, escaped: bool },
    DataLost,
}

enum HostRead {
    Clean,
    Escaped,
    Abort,
}

enum StageFail {
    /// Disk copy rejected and the row could not rebuild it.
    Lost,
    Transient,
}

enum DestageFail {
    Detected,
    Unavailable,
}

struct CheckResult {
    abort: Option<Mechanism>,
    corrected: Vec<(RecordId, u16)>,
}

struct Streams {
    transfer: RngStream,
    escape: RngStream,
    stored: RngStream,
    load: RngStream,
    retry: RngStream,
}

pub struct Controller {
    pub cfg: ControllerConfig,
    now: SimTime,
    pub cache: CacheState,
    pub disks: DiskArrayState,
    pub records: RecordStore,
    pub metrics: Metrics,
    burst: BurstTable,
    armed: [u32; 4],
    rng: Streams,
    down_since: Option<SimTime>,
    log: Option<Box<dyn Write + Send>>,
}

fn site_idx(site: Site) -> usize {
    Site::ALL.iter().position(|&s| s == site).expect("site in ALL")
}

fn site_origin(site: Site) -> Origin {
    match site {
        Site::Bus1 => Origin::Bus1,
        Site::Bus2 => Origin::Bus2,
        Site::CciMem => Origin::CciMem,
        Site::CciChan => Origin::CciChan,
    }
}

/// Contiguous-length burst placed on distinct random bit positions.
fn storage_burst<R: Rng + ?Sized>(rng: &mut R, geom: Geometry, mean: f64, sd: f64) -> SymbolErrors {
    let track_bits = geom.record_bits();
    let len = if sd > 0.0 {
        Normal::new(mean, sd).expect("sd > 0").sample(rng).round()
    } else {
        mean.round()
    };
    let len = len.clamp(1.0, track_bits as f64) as usize;
    let mut errs = SymbolErrors::new();
    for pos in index::sample(rng, track_bits as usize, len) {
        errs.add(geom, (pos / geom.bits_per_symbol as usize) as u16, 1);
    }
    errs
}

impl Controller {
    pub fn new(cfg: ControllerConfig, burst: BurstTable, rngs: &mut RngFactory) -> Result<Self> {
        cfg.validate()?;
        if cfg.faults.bus_per_h > 0.0 || cfg.faults.cci_per_h > 0.0 {
            burst.require_all()?;
        }
        Ok(Controller {
            cache: CacheState::new(cfg.cache_capacity, cfg.memory_cards, cfg.cci_chan, cfg.cci_mem),
            disks: DiskArrayState::new(cfg.n_data_disks, cfg.n_tracks),
            records: RecordStore::default(),
            metrics: Metrics::new(cfg.coverage_unit, cfg.window_len),
            burst,
            armed: [0; 4],
            rng: Streams {
                transfer: rngs.fork("transfer")?,
                escape: rngs.fork("crc-escape")?,
                stored: rngs.fork("stored")?,
                load: rngs.fork("load")?,
                retry: rngs.fork("retry")?,
            },
            now: SimTime::ZERO,
            down_since: None,
            log: None,
            cfg,
        })
    }

    /// Write one JSON object per event to `sink`.
    pub fn set_event_log(&mut self, sink: Box<dyn Write + Send>) {
        self.log = Some(sink);
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn set_now(&mut self, t: SimTime) {
        debug_assert!(t >= self.now, "time went backwards");
        self.now = t;
    }

    pub fn geometry(&self) -> Geometry {
        self.cfg.geometry
    }

    fn emit(&mut self, event: &str, body: Value) {
        if let Some(log) = self.log.as_mut() {
            let mut v = json!({ "t_ns": self.now.as_ns(), "event": event });
            if let (Some(m), Value::Object(b)) = (v.as_object_mut(), body) {
                m.extend(b);
            }
            // Event logging is best effort; a broken sink must not stop the run.
            let _ = writeln!(log, "{v}");
        }
    }

    // ---- replica bookkeeping ----

    pub fn replica(&self, track: u32, kind: ReplicaKind) -> Option<&Replica> {
        match kind {
            ReplicaKind::Vm => self.cache.get(track)?.vm.as_ref(),
            ReplicaKind::Nvm => self.cache.get(track)?.nvm.as_ref(),
            ReplicaKind::Disk => (!self.disks.lost[track as usize]).then(|| &self.disks.replicas[track as usize]),
        }
    }

    fn slot_mut(&mut self, track: u32, kind: ReplicaKind) -> Option<&mut Option<Replica>> {
        let e = self.cache.get_mut(track)?;
        match kind {
            ReplicaKind::Vm => Some(&mut e.vm),
            ReplicaKind::Nvm => Some(&mut e.nvm),
            ReplicaKind::Disk => None,
        }
    }

    /// Replace the `kind` copy of `track` with data carrying `frags`.
    fn store(&mut self, track: u32, kind: ReplicaKind, frags: Vec<Fragment>) {
        let ids = records_in(&frags);
        let mut first: Option<(SimTime, Origin)> = None;
        for &id in &ids {
            let r = self.records.get_mut(id);
            r.homes += 1;
            let cand = (r.latency_start, r.origin);
            if first.is_none_or(|f| cand.0 < f.0) {
                first = Some(cand);
            }
        }
        let new = Replica {
            frags,
            first_error: first,
        };
        let old = match kind {
            ReplicaKind::Disk => {
                self.disks.lost[track as usize] = false;
                std::mem::replace(&mut self.disks.replicas[track as usize], new)
            }
            _ => {
                let slot = self.slot_mut(track, kind).expect("store into non-resident track");
                slot.replace(new).unwrap_or_default()
            }
        };
        self.release(old.frags, Disposition::Overwritten);
    }

    /// Drop a cache copy entirely.
    fn drop_cache_copy(&mut self, track: u32, kind: ReplicaKind) {
        if let Some(old) = self.slot_mut(track, kind).and_then(|s| s.take()) {
            self.release(old.frags, Disposition::Overwritten);
        }
    }

    fn drop_disk_copy(&mut self, track: u32) {
        let old = std::mem::take(&mut self.disks.replicas[track as usize]);
        self.release(old.frags, Disposition::Overwritten);
    }

    /// A ledger holding `frags` has gone; records left with no home resolve
    /// to `disp` unless they are still travelling.
    fn release(&mut self, frags: Vec<Fragment>, disp: Disposition) {
        for id in records_in(&frags) {
            let r = self.records.get_mut(id);
            r.homes -= 1;
            if r.homes == 0 {
                self.resolve(id, disp);
            }
        }
    }

    /// Append a freshly injected record to a stored copy.
    fn add_record_to(&mut self, track: u32, kind: ReplicaKind, id: RecordId, frags: Vec<Fragment>) {
        let origin = self.records.get(id).origin;
        let now = self.now;
        let rep = match kind {
            ReplicaKind::Disk => &mut self.disks.replicas[track as usize],
            _ => self
                .slot_mut(track, kind)
                .and_then(|s| s.as_mut())
                .expect("inject into missing copy"),
        };
        rep.frags.extend(frags);
        let first = *rep.first_error.get_or_insert((now, origin));
        let r = self.records.get_mut(id);
        r.homes += 1;
        r.latency_start = r.latency_start.min(first.0);
    }

    fn resolve(&mut self, id: RecordId, disp: Disposition) {
        let rec = self.records.get(id);
        if !rec.is_pending() {
            return;
        }
        let (track, origin) = (rec.track, rec.origin);
        let mut start = rec.latency_start;
        for kind in [ReplicaKind::Vm, ReplicaKind::Nvm, ReplicaKind::Disk] {
            if let Some(rep) = self.replica(track, kind) {
                if let (Some((t, _)), true) = (rep.first_error, rep.contains(id)) {
                    start = start.min(t);
                }
            }
        }
        let now = self.now;
        let r = self.records.get_mut(id);
        r.disposition = disp;
        r.resolved_at = Some(now);
        let lat = now.saturating_sub(start).as_ns();
        self.metrics.on_resolve(origin, disp, lat);
        self.emit(
            "resolve",
            json!({ "record": id, "track": track, "origin": origin.code6(), "disposition": disp.name(), "latency_ns": lat }),
        );
    }

    // ---- injection ----

    /// Inject the faults due at `site` into a transfer.
    fn inject_site(&mut self, f: &mut Vec<Fragment>, track: u32, site: Site) {
        let n = match self.cfg.faults.transfer_model {
            TransferModel::Armed => std::mem::take(&mut self.armed[site_idx(site)]),
            TransferModel::Window => {
                let per_ns = self.cfg.faults.site_per_h(site) / SimTime::NS_PER_H as f64;
                let p = per_ns * self.cfg.timing.stage_ns(site, self.cfg.geometry) as f64;
                (p > 0.0 && self.rng.transfer.random::<f64>() < p) as u32
            }
        };
        let geom = self.cfg.geometry;
        let scope = Scope::for_location(site.location());
        for _ in 0..n {
            let bits = self.burst.sample(site, &mut self.rng.transfer).unwrap_or(0);
            if bits == 0 {
                continue;
            }
            let mut errs = SymbolErrors::new();
            for _ in 0..bits {
                let s = self.rng.transfer.random_range(0..geom.symbols_per_record);
                errs.add(geom, s, 1);
            }
            let frags: Vec<Fragment> = errs
                .iter()
                .map(|(symbol, b)| Fragment {
                    record: 0,
                    symbol,
                    bits: b,
                    scope,
                })
                .collect();
            let id = self.records.create(track, site_origin(site), self.now, errs);
            f.extend(frags.into_iter().map(|fr| Fragment { record: id, ..fr }));
            self.metrics.on_injection(site.name());
            self.emit("inject", json!({ "record": id, "track": track, "origin": site_origin(site).code6(), "bits": bits }));
        }
    }

    /// Arm one transient fault at `site` (armed transfer model).
    pub fn arm_transfer_fault(&mut self, site: Site) {
        self.armed[site_idx(site)] += 1;
    }

    pub fn armed(&self, site: Site) -> u32 {
        self.armed[site_idx(site)]
    }

    fn inject_stored(&mut self, track: u32, kind: ReplicaKind, errs: SymbolErrors) -> RecordId {
        let (origin, scope) = match kind {
            ReplicaKind::Disk => (Origin::Disk, Scope::for_location(Location::Disk)),
            _ => (Origin::CacheMemory, Scope::for_location(Location::CacheMemory)),
        };
        let frags: Vec<Fragment> = errs
            .iter()
            .map(|(symbol, bits)| Fragment {
                record: 0,
                symbol,
                bits,
                scope,
            })
            .collect();
        let bits = errs.total_bits();
        let id = self.records.create(track, origin, self.now, errs);
        let frags = frags.into_iter().map(|f| Fragment { record: id, ..f }).collect();
        self.add_record_to(track, kind, id, frags);
        self.metrics.on_injection(origin.code6());
        self.emit("inject", json!({ "record": id, "track": track, "origin": origin.code6(), "bits": bits }));
        id
    }

    /// Time-dependent storage fault into a random stored copy. Returns `None`
    /// when no copy is eligible.
    pub fn inject_time_dependent(&mut self, target: StoredTarget) -> Option<RecordId> {
        let (track, kind) = match target {
            StoredTarget::CacheMemory => {
                let nvm = self.cfg.nvm_stored_injection;
                let cands: Vec<(u32, ReplicaKind)> = self
                    .cache
                    .entries()
                    .flat_map(|(&t, e)| {
                        let vm = e.vm.is_some().then_some((t, ReplicaKind::Vm));
                        let nv = (nvm && e.nvm.is_some()).then_some((t, ReplicaKind::Nvm));
                        vm.into_iter().chain(nv)
                    })
                    .collect();
                if cands.is_empty() {
                    return None;
                }
                cands[self.rng.stored.random_range(0..cands.len())]
            }
            StoredTarget::Disk => {
                let n = self.cfg.n_tracks;
                let t0 = self.rng.stored.random_range(0..n);
                let t = (0..n).map(|k| (t0 + k) % n).find(|&t| !self.disks.lost[t as usize])?;
                (t, ReplicaKind::Disk)
            }
        };
        let (mean, sd) = (self.cfg.faults.burst_mean_bits, self.cfg.faults.burst_sd_bits);
        let errs = storage_burst(&mut self.rng.stored, self.cfg.geometry, mean, sd);
        Some(self.inject_stored(track, kind, errs))
    }

    /// Load-dependent fault into the copy just accessed.
    fn load_inject(&mut self, track: u32, kind: ReplicaKind) {
        let rate = self.cfg.faults.load_per_bit;
        if rate <= 0.0 || self.replica(track, kind).is_none() {
            return;
        }
        let p = rate * self.cfg.geometry.record_bits() as f64;
        if self.rng.load.random::<f64>() >= p {
            return;
        }
        let (mean, sd) = (self.cfg.faults.burst_mean_bits, self.cfg.faults.burst_sd_bits);
        let errs = storage_burst(&mut self.rng.load, self.cfg.geometry, mean, sd);
        self.inject_stored(track, kind, errs);
    }

    // ---- checks ----

    /// Run mechanism `m` over the in-flight fragments. EDAC corrections are
    /// removed from `f`; `strip` takes `m` out of every fragment's scope.
    fn check(&mut self, f: &mut Vec<Fragment>, m: Mechanism, strip: bool) -> CheckResult {
        let geom = self.cfg.geometry;
        let errs = view(f, geom, m);
        let mut res = CheckResult {
            abort: None,
            corrected: vec![],
        };
        if !errs.is_empty() {
            let in_scope = |fr: &Fragment| fr.scope.covers(m);
            let (out, implicated): (CheckOutcome, Vec<RecordId>) = match m {
                Mechanism::Parity => {
                    let odd: BTreeSet<u16> = errs.iter().filter(|&(_, c)| c % 2 == 1).map(|(s, _)| s).collect();
                    let ids = f.iter().filter(|fr| in_scope(fr) && odd.contains(&fr.symbol)).map(|fr| fr.record);
                    let ids = ids.collect::<BTreeSet<_>>().into_iter().collect();
                    (parity_check(&errs), ids)
                }
                Mechanism::Edac => {
                    let (out, _) = edac_check(&errs);
                    let fix: BTreeSet<u16> = errs.iter().filter(|&(_, c)| c <= 2).map(|(s, _)| s).collect();
                    let det: BTreeSet<u16> = errs.iter().filter(|&(_, c)| c == 3).map(|(s, _)| s).collect();
                    let ids = f.iter().filter(|fr| in_scope(fr) && det.contains(&fr.symbol)).map(|fr| fr.record);
                    let ids = ids.collect::<BTreeSet<_>>().into_iter().collect();
                    f.retain(|fr| {
                        if in_scope(fr) && fix.contains(&fr.symbol) {
                            res.corrected.push((fr.record, fr.symbol));
                            false
                        } else {
                            true
                        }
                    });
                    (out, ids)
                }
                Mechanism::FeCrc | Mechanism::PsCrc => {
                    let out = crc_check(&errs, self.cfg.faults.p_escape, &mut self.rng.escape);
                    if out.status == crate::codes::Status::Missed {
                        self.metrics.crc_escapes += 1;
                    }
                    let ids = f.iter().filter(|fr| in_scope(fr)).map(|fr| fr.record);
                    (out, ids.collect::<BTreeSet<_>>().into_iter().collect())
                }
            };
            self.metrics.on_check(m, &out);
            if out.aborts() {
                for id in implicated {
                    self.resolve(id, Disposition::Detected(m));
                }
                res.abort = Some(m);
            }
        }
        if strip {
            for fr in f.iter_mut() {
                fr.scope = fr.scope.without(m);
            }
        }
        res
    }

    /// Apply EDAC corrections: write them back to the copy they were read
    /// from and resolve records that no longer exist anywhere.
    fn settle_corrections(&mut self, track: u32, source: Option<ReplicaKind>, f: &[Fragment], corrected: Vec<(RecordId, u16)>) {
        if corrected.is_empty() {
            return;
        }
        let fixed: BTreeSet<(RecordId, u16)> = corrected.into_iter().collect();
        let ids: BTreeSet<RecordId> = fixed.iter().map(|x| x.0).collect();
        if let Some(kind) = source {
            let rep = match kind {
                ReplicaKind::Disk => Some(&mut self.disks.replicas[track as usize]),
                _ => self.slot_mut(track, kind).and_then(|s| s.as_mut()),
            };
            if let Some(rep) = rep {
                let before: BTreeSet<RecordId> = rep.frags.iter().map(|f| f.record).collect();
                rep.frags
                    .retain(|fr| !(fr.scope.covers(Mechanism::Edac) && fixed.contains(&(fr.record, fr.symbol))));
                let after: BTreeSet<RecordId> = rep.frags.iter().map(|f| f.record).collect();
                if rep.frags.is_empty() {
                    rep.first_error = None;
                }
                for id in before.difference(&after) {
                    self.records.get_mut(*id).homes -= 1;
                }
            }
        }
        let in_flight: BTreeSet<RecordId> = f.iter().map(|fr| fr.record).collect();
        for id in ids {
            if !in_flight.contains(&id) && self.records.get(id).homes == 0 {
                self.resolve(id, Disposition::Corrected);
            }
        }
    }

    /// In-flight data abandoned; homeless records are overwritten.
    fn discard(&mut self, f: Vec<Fragment>) {
        for id in records_in(&f) {
            if self.records.get(id).homes == 0 {
                self.resolve(id, Disposition::Overwritten);
            }
        }
    }

    /// Data delivered to the host; every record still in it escaped.
    fn deliver(&mut self, f: Vec<Fragment>) -> bool {
        let ids = records_in(&f);
        for &id in &ids {
            self.resolve(id, Disposition::EscapedToHost);
        }
        !ids.is_empty()
    }

    // ---- data paths ----

    /// Cache → channel side. EDAC on Bus 2, parity on Bus 1.
    fn outbound(&mut self, track: u32, src: ReplicaKind) -> Option<Vec<Fragment>> {
        let mut f = self.replica(track, src).map(|r| r.frags.clone()).unwrap_or_default();
        self.inject_site(&mut f, track, Site::Bus2);
        let r = self.check(&mut f, Mechanism::Edac, true);
        self.settle_corrections(track, Some(src), &f, r.corrected);
        if r.abort.is_some() {
            self.discard(f);
            return None;
        }
        self.inject_site(&mut f, track, Site::CciMem);
        self.inject_site(&mut f, track, Site::Bus1);
        if self.check(&mut f, Mechanism::Parity, true).abort.is_some() {
            self.discard(f);
            return None;
        }
        self.inject_site(&mut f, track, Site::CciChan);
        Some(f)
    }

    fn host_read(&mut self, track: u32) -> HostRead {
        let Some(mut f) = self.outbound(track, ReplicaKind::Vm) else {
            return HostRead::Abort;
        };
        if self.check(&mut f, Mechanism::FeCrc, false).abort.is_some() {
            self.discard(f);
            return HostRead::Abort;
        }
        if self.deliver(f) {
            HostRead::Escaped
        } else {
            HostRead::Clean
        }
    }

    /// Host → cache-memory interface, with the channel-side checks.
    fn inbound(&mut self, track: u32) -> Option<Vec<Fragment>> {
        let mut f = Vec::new();
        self.inject_site(&mut f, track, Site::CciChan);
        self.inject_site(&mut f, track, Site::Bus1);
        if self.check(&mut f, Mechanism::Parity, true).abort.is_some()
            || self.check(&mut f, Mechanism::FeCrc, false).abort.is_some()
        {
            self.discard(f);
            return None;
        }
        self.inject_site(&mut f, track, Site::CciMem);
        Some(f)
    }

    /// Bus 2 leg into one memory copy. Aborted legs are returned for the
    /// caller to discard together with any sibling leg.
    fn memory_leg(&mut self, track: u32, mut f: Vec<Fragment>) -> (Vec<Fragment>, bool) {
        self.inject_site(&mut f, track, Site::Bus2);
        if self.cfg.edac_check_on_write {
            let r = self.check(&mut f, Mechanism::Edac, false);
            self.settle_corrections(track, None, &f, r.corrected);
            return (f, r.abort.is_some());
        }
        (f, false)
    }

    /// Disk → cache transfer of the disk copy.
    fn stage_transfer(&mut self, track: u32) -> Result<Vec<Fragment>, bool> {
        let mut f = self.replica(track, ReplicaKind::Disk).map(|r| r.frags.clone()).unwrap_or_default();
        if self.check(&mut f, Mechanism::PsCrc, true).abort.is_some() {
            self.discard(f);
            return Err(true);
        }
        self.inject_site(&mut f, track, Site::CciChan);
        self.inject_site(&mut f, track, Site::Bus1);
        if self.check(&mut f, Mechanism::Parity, true).abort.is_some() {
            self.discard(f);
            return Err(false);
        }
        self.inject_site(&mut f, track, Site::CciMem);
        self.inject_site(&mut f, track, Site::Bus2);
        Ok(f)
    }

    fn stage(&mut self, track: u32) -> Result<(), StageFail> {
        let row = self.disks.row_of(track);
        if self.disks.lost[track as usize] && self.reconstruct_row(row, None).is_none() {
            return Err(StageFail::Lost);
        }
        for _ in 0..=self.cfg.read_retries {
            match self.stage_transfer(track) {
                Ok(f) => {
                    self.load_inject(track, ReplicaKind::Disk);
                    self.store(track, ReplicaKind::Vm, f);
                    self.load_inject(track, ReplicaKind::Vm);
                    return Ok(());
                }
                Err(true) => {
                    if self.reconstruct_row(row, Some(track)).is_none() {
                        return Err(StageFail::Lost);
                    }
                }
                Err(false) => {}
            }
        }
        Err(StageFail::Transient)
    }

    /// Whether retrying a read of `kind` would meet the same stored error.
    fn persistent(&self, track: u32, kind: ReplicaKind) -> bool {
        let Some(rep) = self.replica(track, kind) else {
            return false;
        };
        if rep.frags.iter().any(|f| !f.scope.covers(Mechanism::Edac)) {
            return true;
        }
        view(&rep.frags, self.cfg.geometry, Mechanism::Edac).iter().any(|(_, c)| c >= 3)
    }

    /// Cache → disk copy of `track` from `src`.
    fn destage(&mut self, track: u32, src: ReplicaKind) -> Result<(), DestageFail> {
        if self.disks.lost[track as usize] {
            let row = self.disks.row_of(track);
            if !self.disks.reconstructable(row, None) {
                self.data_loss_event(track, "destage to unrecoverable row");
                self.disks.lost[track as usize] = false;
                return Err(DestageFail::Unavailable);
            }
        }
        for _ in 0..=self.cfg.read_retries {
            if let Some(f) = self.outbound(track, src) {
                self.store(track, ReplicaKind::Disk, f);
                self.load_inject(track, ReplicaKind::Disk);
                return Ok(());
            }
            if self.persistent(track, src) {
                break;
            }
        }
        Err(DestageFail::Detected)
    }

    // ---- host operations ----

    pub fn available(&self) -> bool {
        self.cache.interfaces_ok() && self.cache.any_card_ok()
    }

    /// Serve one request at the current time.
    pub fn handle(&mut self, track: u32, op: Op) -> OutcomeClass {
        let o = if track >= self.cfg.n_tracks || !self.available() {
            OutcomeClass::Unavailable
        } else {
            match op {
                Op::Read => self.handle_read(track),
                Op::FastWrite => self.handle_fast_write(track),
                Op::WriteThrough => self.handle_write_through(track),
            }
        };
        self.metrics.on_outcome(o);
        o
    }

    fn recovery_outcome(r: Recovery) -> OutcomeClass {
        match r {
            Recovery::Recovered { escaped: false, .. } => OutcomeClass::Success,
            Recovery::Recovered { escaped: true, .. } => OutcomeClass::Undetected,
            Recovery::DataLost => OutcomeClass::DetectedUncorrected,
        }
    }

    pub fn handle_read(&mut self, track: u32) -> OutcomeClass {
        if self.cache.get(track).is_some() {
            self.metrics.hits += 1;
            self.cache.touch(track, self.now);
        } else {
            self.metrics.misses += 1;
            if !self.allocate(track) {
                return OutcomeClass::Unavailable;
            }
            match self.stage(track) {
                Ok(()) => {}
                Err(StageFail::Lost) => {
                    self.data_lost(track);
                    return OutcomeClass::DetectedUncorrected;
                }
                Err(StageFail::Transient) => {
                    let e = self.cache.remove(track).expect("allocated above");
                    self.release_entry(e);
                    return OutcomeClass::DetectedUncorrected;
                }
            }
        }
        if self.cache.get(track).is_some_and(|e| e.vm.is_none()) {
            let r = self.recover_track_read(track);
            return Self::recovery_outcome(r);
        }
        let mut attempt = 0;
        loop {
            match self.host_read(track) {
                HostRead::Clean => {
                    self.load_inject(track, ReplicaKind::Vm);
                    return OutcomeClass::Success;
                }
                HostRead::Escaped => {
                    self.load_inject(track, ReplicaKind::Vm);
                    return OutcomeClass::Undetected;
                }
                HostRead::Abort => {
                    if attempt >= self.cfg.read_retries {
                        break;
                    }
                    attempt += 1;
                    if self.persistent(track, ReplicaKind::Vm) {
                        let p = self.cfg.soft_retry_success;
                        if p > 0.0 && self.rng.retry.random::<f64>() < p {
                            self.store(track, ReplicaKind::Vm, vec![]);
                        } else {
                            break;
                        }
                    }
                }
            }
        }
        let r = self.recover_track_read(track);
        Self::recovery_outcome(r)
    }

    /// Make `track` resident with a usable VM slot for a write.
    fn ensure_resident_for_write(&mut self, track: u32) -> bool {
        if let Some(e) = self.cache.get(track) {
            if e.vm.is_some() {
                self.cache.touch(track, self.now);
                return true;
            }
            let e = self.cache.remove(track).expect("resident");
            self.release_entry(e);
        }
        self.allocate(track)
    }

    pub fn handle_fast_write(&mut self, track: u32) -> OutcomeClass {
        for _ in 0..=self.cfg.read_retries {
            let Some(f) = self.inbound(track) else { continue };
            let (vm_f, a1) = self.memory_leg(track, f.clone());
            let (nvm_f, a2) = self.memory_leg(track, f);
            if a1 || a2 {
                let mut all = vm_f;
                all.extend(nvm_f);
                self.discard(all);
                continue;
            }
            if !self.ensure_resident_for_write(track) {
                let mut all = vm_f;
                all.extend(nvm_f);
                self.discard(all);
                return OutcomeClass::Unavailable;
            }
            self.store(track, ReplicaKind::Vm, vm_f);
            let slot = self.cache.get(track).expect("resident").slot;
            if self.cache.card_ok(self.cache.nvm_card(slot)) {
                self.store(track, ReplicaKind::Nvm, nvm_f);
            } else {
                self.drop_cache_copy(track, ReplicaKind::Nvm);
                self.discard(nvm_f);
            }
            self.cache.set_dirty(track, true);
            self.load_inject(track, ReplicaKind::Vm);
            self.maybe_threshold_flush();
            return OutcomeClass::Success;
        }
        OutcomeClass::DetectedUncorrected
    }

    pub fn handle_write_through(&mut self, track: u32) -> OutcomeClass {
        for _ in 0..=self.cfg.read_retries {
            let Some(f) = self.inbound(track) else { continue };
            let (vm_f, aborted) = self.memory_leg(track, f);
            if aborted {
                self.discard(vm_f);
                continue;
            }
            if !self.ensure_resident_for_write(track) {
                self.discard(vm_f);
                return OutcomeClass::Unavailable;
            }
            self.store(track, ReplicaKind::Vm, vm_f);
            self.drop_cache_copy(track, ReplicaKind::Nvm);
            self.cache.set_dirty(track, false);
            self.load_inject(track, ReplicaKind::Vm);
            match self.destage(track, ReplicaKind::Vm) {
                Ok(()) => return OutcomeClass::Success,
                Err(DestageFail::Detected) => {}
                Err(DestageFail::Unavailable) => return OutcomeClass::Unavailable,
            }
        }
        OutcomeClass::DetectedUncorrected
    }

    // ---- recovery ----

    /// Recover good data for `track` after its VM copy failed a read.
    pub fn recover_track_read(&mut self, track: u32) -> Recovery {
        let Some(e) = self.cache.get(track) else {
            return Recovery::DataLost;
        };
        let (slot, dirty) = (e.slot, e.dirty);
        if e.nvm.is_some() && self.cache.card_ok(self.cache.nvm_card(slot)) {
            let mut f = self.replica(track, ReplicaKind::Nvm).map(|r| r.frags.clone()).unwrap_or_default();
            let r = self.check(&mut f, Mechanism::Edac, true);
            self.settle_corrections(track, Some(ReplicaKind::Nvm), &f, r.corrected);
            let ok = r.abort.is_none() && self.check(&mut f, Mechanism::FeCrc, false).abort.is_none();
            if ok {
                if self.cache.card_ok(self.cache.vm_card(slot)) {
                    let copy = self.replica(track, ReplicaKind::Nvm).map(|r| r.frags.clone()).unwrap_or_default();
                    self.store(track, ReplicaKind::Vm, copy);
                }
                let escaped = self.deliver(f);
                self.metrics.on_recovery("NVM");
                return Recovery::Recovered { source: "NVM", escaped };
            }
            self.discard(f);
        }
        if dirty {
            return self.data_lost(track);
        }
        let row = self.disks.row_of(track);
        if self.disks.lost[track as usize] && self.reconstruct_row(row, None).is_none() {
            return self.data_lost(track);
        }
        let mut f = self.replica(track, ReplicaKind::Disk).map(|r| r.frags.clone()).unwrap_or_default();
        let bad = self.check(&mut f, Mechanism::PsCrc, true).abort.is_some()
            || self.check(&mut f, Mechanism::FeCrc, false).abort.is_some();
        let source = if bad {
            self.discard(f);
            if self.reconstruct_row(row, Some(track)).is_none() {
                return self.data_lost(track);
            }
            f = vec![];
            "RECONSTRUCTION"
        } else {
            "DISK"
        };
        if self.cache.card_ok(self.cache.vm_card(slot)) {
            self.store(track, ReplicaKind::Vm, f.clone());
        }
        let escaped = self.deliver(f);
        self.metrics.on_recovery(source);
        Recovery::Recovered { source, escaped }
    }

    fn data_loss_event(&mut self, track: u32, why: &str) {
        self.metrics.data_loss.push(self.now);
        self.emit("data_loss", json!({ "track": track, "reason": why }));
    }

    /// No good copy is left: report the loss and restart the track from a
    /// clean state so later requests see fresh data.
    fn data_lost(&mut self, track: u32) -> Recovery {
        self.data_loss_event(track, "no good copy");
        if let Some(e) = self.cache.get(track) {
            if self.cache.card_ok(self.cache.vm_card(e.slot)) {
                self.store(track, ReplicaKind::Vm, vec![]);
                self.drop_cache_copy(track, ReplicaKind::Nvm);
                self.cache.set_dirty(track, false);
            } else {
                let e = self.cache.remove(track).expect("resident");
                self.release_entry(e);
            }
        }
        self.drop_disk_copy(track);
        self.disks.lost[track as usize] = false;
        Recovery::DataLost
    }

    fn release_entry(&mut self, e: crate::level2::cache::CacheEntry) {
        if let Some(vm) = e.vm {
            self.release(vm.frags, Disposition::Overwritten);
        }
        if let Some(nvm) = e.nvm {
            self.release(nvm.frags, Disposition::Overwritten);
        }
    }

    /// Rebuild the invalid members of `row` from the others; `force` counts
    /// one extra member as invalid. Returns the number of tracks rewritten.
    pub fn reconstruct_row(&mut self, row: u32, force: Option<u32>) -> Option<u32> {
        if !self.disks.reconstructable(row, force) {
            return None;
        }
        let mut n = 0;
        for t in self.disks.members(row) {
            if self.disks.member_invalid(t, force) {
                self.drop_disk_copy(t);
                self.disks.lost[t as usize] = false;
                n += 1;
            }
        }
        for lost in [&mut self.disks.p_lost[row as usize], &mut self.disks.q_lost[row as usize]] {
            if *lost {
                *lost = false;
                n += 1;
            }
        }
        self.metrics.on_reconstruct(n as u64);
        if n > 0 {
            self.emit("reconstruct", json!({ "row": row, "tracks": n }));
        }
        Some(n)
    }

    // ---- cache management ----

    fn allocate(&mut self, track: u32) -> bool {
        loop {
            if self.cache.has_free_slot() {
                self.cache.insert(track, self.now);
                return true;
            }
            match self.cache.lru_victim() {
                Some(v) => self.evict(v),
                None => return false,
            }
        }
    }

    fn evict(&mut self, victim: u32) {
        if self.cache.get(victim).is_some_and(|e| e.dirty) {
            self.flush_one(victim);
        }
        if let Some(e) = self.cache.remove(victim) {
            self.release_entry(e);
        }
    }

    /// Evict the least-recently-used resident if the cache is full.
    pub fn evict_lru(&mut self) -> Option<u32> {
        if self.cache.has_free_slot() {
            return None;
        }
        let v = self.cache.lru_victim()?;
        self.evict(v);
        Some(v)
    }

    /// Destage one dirty track, falling back to its NVM copy.
    fn flush_one(&mut self, track: u32) -> bool {
        let Some(e) = self.cache.get(track) else { return false };
        let slot = e.slot;
        let vm_ok = e.vm.is_some() && self.cache.card_ok(self.cache.vm_card(slot));
        let nvm_ok = e.nvm.is_some() && self.cache.card_ok(self.cache.nvm_card(slot));
        let mut result = if vm_ok {
            self.destage(track, ReplicaKind::Vm)
        } else {
            Err(DestageFail::Detected)
        };
        if matches!(result, Err(DestageFail::Detected)) && nvm_ok {
            result = self.destage(track, ReplicaKind::Nvm);
            if result.is_ok() && self.cache.card_ok(self.cache.vm_card(slot)) {
                let copy = self.replica(track, ReplicaKind::Nvm).map(|r| r.frags.clone()).unwrap_or_default();
                self.store(track, ReplicaKind::Vm, copy);
            }
        }
        match result {
            Ok(()) => {
                self.cache.set_dirty(track, false);
                self.drop_cache_copy(track, ReplicaKind::Nvm);
                self.metrics.flushed += 1;
                true
            }
            Err(DestageFail::Detected) => {
                self.data_lost(track);
                false
            }
            Err(DestageFail::Unavailable) => false,
        }
    }

    /// Destage every dirty track in id order. Returns tracks flushed.
    pub fn writeback_flush(&mut self) -> u32 {
        if !self.available() {
            return 0;
        }
        let mut n = 0;
        for t in self.cache.dirty_tracks() {
            if self.cache.get(t).is_some_and(|e| e.dirty) && self.flush_one(t) {
                n += 1;
            }
        }
        n
    }

    fn maybe_threshold_flush(&mut self) {
        let limit = self.cfg.dirty_threshold * self.cfg.cache_capacity as f64;
        if self.cache.dirty_count() as f64 > limit {
            self.writeback_flush();
        }
    }

    // ---- component failures ----

    pub fn fail_component(&mut self, c: Component) {
        self.emit("failure", json!({ "component": c.name() }));
        match c {
            Component::CciChan(i) => self.cache.cci_chan_up[i as usize] = false,
            Component::CciMem(i) => self.cache.cci_mem_up[i as usize] = false,
            Component::Card(card) => {
                for t in self.cache.fail_card(card) {
                    let e = self.cache.get(t).expect("resident");
                    let (slot, dirty) = (e.slot, e.dirty);
                    if self.cache.nvm_card(slot) == card {
                        self.drop_cache_copy(t, ReplicaKind::Nvm);
                    }
                    if self.cache.vm_card(slot) == card {
                        self.drop_cache_copy(t, ReplicaKind::Vm);
                        let has_nvm = self.cache.get(t).is_some_and(|e| e.nvm.is_some());
                        if dirty && !has_nvm {
                            self.data_lost(t);
                        } else if !dirty {
                            let e = self.cache.remove(t).expect("resident");
                            self.release_entry(e);
                        }
                    }
                }
            }
            Component::Disk(d) => {
                for t in self.disks.fail_disk(d) {
                    self.drop_disk_copy(t);
                }
            }
        }
        self.update_availability();
    }

    pub fn repair_component(&mut self, c: Component) {
        self.emit("repair", json!({ "component": c.name() }));
        match c {
            Component::CciChan(i) => self.cache.cci_chan_up[i as usize] = true,
            Component::CciMem(i) => self.cache.cci_mem_up[i as usize] = true,
            Component::Card(card) => self.cache.repair_card(card),
            Component::Disk(_) => {}
        }
        self.update_availability();
    }

    fn update_availability(&mut self) {
        match (self.available(), self.down_since) {
            (false, None) => self.down_since = Some(self.now),
            (true, Some(s)) => {
                self.metrics.unavailable_ns += (self.now - s).as_ns();
                self.down_since = None;
            }
            _ => {}
        }
    }

    /// Close the books on downtime at the end of a run.
    pub fn finish(&mut self, end: SimTime) {
        if let Some(s) = self.down_since.take() {
            self.metrics.unavailable_ns += end.saturating_sub(s).as_ns();
            self.down_since = Some(end);
        }
    }

    /// Rebuild the next row of failed `disk` onto its spare. Returns the
    /// delay until the following step, or `None` once the disk is done.
    pub fn rebuild_step(&mut self, disk: u32) -> Option<SimTime> {
        let &start = self.disks.rebuilding.get(&disk)?;
        let rows = self.disks.n_rows();
        let Some(row) = (start..rows).find(|&r| self.disks.needs_rebuild(disk, r)) else {
            self.disks.rebuilding.remove(&disk);
            return None;
        };
        let n = match self.reconstruct_row(row, None) {
            Some(n) => n,
            None => {
                // Too many invalid members: the member on the failed disk
                // cannot be recovered and restarts empty.
                self.data_loss_event(row * self.disks.n_data, "rebuild failed");
                if disk < self.disks.n_data {
                    let t = row * self.disks.n_data + disk;
                    self.drop_disk_copy(t);
                    self.disks.lost[t as usize] = false;
                } else if disk == self.disks.n_data {
                    self.disks.p_lost[row as usize] = false;
                } else {
                    self.disks.q_lost[row as usize] = false;
                }
                1
            }
        };
        self.disks.rebuilding.insert(disk, row + 1);
        Some(SimTime::from_ns(self.cfg.rebuild_per_track.as_ns() * n.max(1) as u64))
    }

    // ---- observation ----

    pub fn occupancy(&self) -> Occupancy {
        let residents = self.cache.len() as u64;
        let faulty = self
            .cache
            .entries()
            .filter(|(_, e)| e.vm.as_ref().is_some_and(|r| !r.is_clean()))
            .count() as u64;
        Occupancy {
            residents,
            faulty_residents: faulty,
            capacity: self.cfg.cache_capacity as u64,
            dirty: self.cache.dirty_count() as u64,
            total_tracks: self.cfg.n_tracks as u64,
            faulty_disk_tracks: self.disks.faulty_tracks(),
        }
    }

    pub fn close_window(&mut self, end: SimTime) {
        let occ = self.occupancy();
        self.metrics.snapshot_window(end, occ);
    }

    /// Cross-check ledgers, reference counts and cache accounting.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.cache.check_invariants()?;
        let mut homes: BTreeMap<RecordId, u32> = BTreeMap::new();
        let mut count = |rep: &Replica, what: String| -> std::result::Result<(), String> {
            if !rep.is_clean() && rep.first_error.is_none() {
                return Err(format!("{what}: errors without a first-error time"));
            }
            for id in records_in(&rep.frags) {
                *homes.entry(id).or_default() += 1;
            }
            Ok(())
        };
        for (t, e) in self.cache.entries() {
            if let Some(r) = &e.vm {
                count(r, format!("VM of {t}"))?;
            }
            if let Some(r) = &e.nvm {
                count(r, format!("NVM of {t}"))?;
            }
            if e.dirty && e.vm.is_none() && e.nvm.is_none() {
                return Err(format!("dirty track {t} has no cache copy"));
            }
        }
        for (t, r) in self.disks.replicas.iter().enumerate() {
            if self.disks.lost[t] && !r.is_clean() {
                return Err(format!("lost disk copy of {t} still holds errors"));
            }
            count(r, format!("disk copy of {t}"))?;
        }
        for r in self.records.iter() {
            let h = homes.get(&r.id).copied().unwrap_or(0);
            if h != r.homes {
                return Err(format!("record {} counts {} homes, found {h}", r.id, r.homes));
            }
            if r.homes > 0 && !r.is_pending() && r.disposition != Disposition::EscapedToHost {
                return Err(format!("record {} resolved {} while still stored", r.id, r.disposition.name()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level3::BurstTable;

    fn ctl(faults: FaultPlan) -> Controller {
        let cfg = ControllerConfig {
            n_tracks: 260,
            cache_capacity: 8,
            faults,
            ..ControllerConfig::default()
        };
        let mut burst = BurstTable::default();
        for s in Site::ALL {
            burst.insert(s, &[(1, 1.0)]).unwrap();
        }
        Controller::new(cfg, burst, &mut RngFactory::new(7)).unwrap()
    }

    fn frag(record: RecordId, symbol: u16, bits: u16, scope: Scope) -> Fragment {
        Fragment {
            record,
            symbol,
            bits,
            scope,
        }
    }

    /// Put a record with the given footprint into a stored copy.
    fn plant(c: &mut Controller, track: u32, kind: ReplicaKind, pairs: &[(u16, u16)]) -> RecordId {
        let errs = SymbolErrors::from_pairs(c.geometry(), pairs.iter().copied());
        c.inject_stored(track, kind, errs)
    }

    #[test]
    fn clean_read_miss_then_hit() {
        let mut c = ctl(FaultPlan::none());
        assert_eq!(c.handle(5, Op::Read), OutcomeClass::Success);
        assert_eq!(c.handle(5, Op::Read), OutcomeClass::Success);
        assert_eq!((c.metrics.hits, c.metrics.misses), (1, 1));
        c.check_invariants().unwrap();
    }

    #[test]
    fn triple_bit_symbol_in_vm_is_detected_and_recovered_from_disk() {
        let mut c = ctl(FaultPlan::none());
        c.handle(3, Op::Read);
        let id = plant(&mut c, 3, ReplicaKind::Vm, &[(10, 3)]);
        c.set_now(SimTime::from_ms(5));
        assert_eq!(c.handle(3, Op::Read), OutcomeClass::Success);
        assert_eq!(c.records.get(id).disposition, Disposition::Detected(Mechanism::Edac));
        assert_eq!(c.metrics.recoveries.get("DISK"), Some(&1));
        assert!(c.replica(3, ReplicaKind::Vm).unwrap().is_clean());
        c.check_invariants().unwrap();
    }

    #[test]
    fn single_bit_vm_error_is_corrected_in_place() {
        let mut c = ctl(FaultPlan::none());
        c.handle(3, Op::Read);
        let id = plant(&mut c, 3, ReplicaKind::Vm, &[(1, 1), (2, 2)]);
        assert_eq!(c.handle(3, Op::Read), OutcomeClass::Success);
        assert_eq!(c.records.get(id).disposition, Disposition::Corrected);
        assert!(c.replica(3, ReplicaKind::Vm).unwrap().is_clean());
        let e = c.metrics.coverage[Mechanism::Edac.index()];
        assert_eq!((e.checked, e.corrected), (2, 2));
    }

    #[test]
    fn quad_bit_symbol_escapes_edac_but_not_crc() {
        let mut c = ctl(FaultPlan::none());
        c.handle(3, Op::Read);
        let id = plant(&mut c, 3, ReplicaKind::Vm, &[(7, 4)]);
        assert_eq!(c.handle(3, Op::Read), OutcomeClass::Success);
        assert_eq!(c.records.get(id).disposition, Disposition::Detected(Mechanism::FeCrc));
        assert_eq!(c.metrics.coverage[Mechanism::Edac.index()].missed, 1);
    }

    #[test]
    fn latent_disk_error_is_caught_at_staging_and_rebuilt() {
        let mut c = ctl(FaultPlan::none());
        let id = plant(&mut c, 40, ReplicaKind::Disk, &[(0, 1)]);
        assert_eq!(c.handle(40, Op::Read), OutcomeClass::Success);
        assert_eq!(c.records.get(id).disposition, Disposition::Detected(Mechanism::PsCrc));
        assert_eq!(c.metrics.reconstructions, 1);
        assert!(c.disks.replicas[40].is_clean());
        c.check_invariants().unwrap();
    }

    #[test]
    fn three_bad_members_lose_data() {
        let mut c = ctl(FaultPlan::none());
        for t in [0, 1, 2] {
            plant(&mut c, t, ReplicaKind::Disk, &[(0, 1)]);
        }
        assert_eq!(c.handle(0, Op::Read), OutcomeClass::DetectedUncorrected);
        assert_eq!(c.metrics.data_loss.len(), 1);
        c.check_invariants().unwrap();
    }

    #[test]
    fn fast_write_marks_dirty_and_flush_cleans() {
        let mut c = ctl(FaultPlan::none());
        assert_eq!(c.handle(9, Op::FastWrite), OutcomeClass::Success);
        assert!(c.cache.get(9).unwrap().dirty);
        assert!(c.cache.get(9).unwrap().nvm.is_some());
        assert_eq!(c.writeback_flush(), 1);
        let e = c.cache.get(9).unwrap();
        assert!(!e.dirty && e.nvm.is_none());
    }

    #[test]
    fn dirty_threshold_triggers_flush() {
        let mut c = ctl(FaultPlan::none());
        // capacity 8, threshold 25%: the third dirty track exceeds 2.
        for t in 0..3 {
            c.handle(t, Op::FastWrite);
        }
        assert_eq!(c.cache.dirty_count(), 0);
        assert_eq!(c.metrics.flushed, 3);
    }

    #[test]
    fn overwrite_resolves_stored_records() {
        let mut c = ctl(FaultPlan::none());
        c.handle(4, Op::Read);
        let id = plant(&mut c, 4, ReplicaKind::Vm, &[(0, 3)]);
        c.set_now(SimTime::from_ms(2));
        c.handle(4, Op::WriteThrough);
        let r = c.records.get(id);
        assert_eq!(r.disposition, Disposition::Overwritten);
        assert_eq!(r.resolved_at, Some(SimTime::from_ms(2)));
        c.check_invariants().unwrap();
    }

    #[test]
    fn dirty_victim_is_flushed_before_eviction() {
        let mut c = ctl(FaultPlan {
            ..FaultPlan::none()
        });
        c.cfg.dirty_threshold = 1.0;
        c.handle(0, Op::FastWrite);
        for t in 1..8 {
            c.set_now(SimTime::from_ms(t as u64));
            c.handle(t, Op::Read);
        }
        c.set_now(SimTime::from_ms(20));
        assert_eq!(c.evict_lru(), Some(0));
        assert_eq!(c.metrics.flushed, 1);
        assert!(c.cache.get(0).is_none());
        assert_eq!(c.evict_lru(), None, "not full any more");
    }

    #[test]
    fn bus1_fault_is_caught_by_parity_on_read() {
        let mut c = ctl(FaultPlan::none());
        c.handle(2, Op::Read);
        c.arm_transfer_fault(Site::Bus1);
        assert_eq!(c.handle(2, Op::Read), OutcomeClass::Success);
        let r = c.records.get(0);
        assert_eq!(r.origin, Origin::Bus1);
        assert_eq!(r.disposition, Disposition::Detected(Mechanism::Parity));
        assert_eq!(c.armed(Site::Bus1), 0);
    }

    #[test]
    fn card_failure_keeps_dirty_data_through_nvm() {
        let mut c = ctl(FaultPlan::none());
        c.handle(6, Op::FastWrite);
        let slot = c.cache.get(6).unwrap().slot;
        c.fail_component(Component::Card(c.cache.vm_card(slot)));
        assert!(c.cache.get(6).unwrap().vm.is_none());
        assert_eq!(c.handle(6, Op::Read), OutcomeClass::Success);
        assert_eq!(c.metrics.recoveries.get("NVM"), Some(&1));
        c.check_invariants().unwrap();
    }

    #[test]
    fn interface_side_down_is_unavailable() {
        let mut c = ctl(FaultPlan::none());
        c.fail_component(Component::CciChan(0));
        assert_eq!(c.handle(1, Op::Read), OutcomeClass::Success);
        c.fail_component(Component::CciChan(1));
        c.set_now(SimTime::from_secs(10));
        assert_eq!(c.handle(1, Op::Read), OutcomeClass::Unavailable);
        c.repair_component(Component::CciChan(1));
        assert_eq!(c.metrics.unavailable_ns, 10 * SimTime::NS_PER_S);
    }

    #[test]
    fn disk_failure_and_rebuild() {
        let mut c = ctl(FaultPlan::none());
        let id = plant(&mut c, 14, ReplicaKind::Disk, &[(0, 1)]);
        c.fail_component(Component::Disk(1));
        assert_eq!(c.records.get(id).disposition, Disposition::Overwritten);
        let mut steps = 0;
        while c.rebuild_step(1).is_some() {
            steps += 1;
        }
        assert_eq!(steps, 20);
        assert!(c.disks.lost.iter().all(|&l| !l));
        assert_eq!(c.metrics.reconstructions, 20);
        c.check_invariants().unwrap();
    }

    #[test]
    fn write_to_lost_member_of_doubly_degraded_row_is_unavailable() {
        let mut c = ctl(FaultPlan::none());
        c.fail_component(Component::Disk(0));
        c.fail_component(Component::Disk(1));
        c.fail_component(Component::Disk(13));
        assert_eq!(c.handle(0, Op::WriteThrough), OutcomeClass::Unavailable);
        assert_eq!(c.metrics.data_loss.len(), 1);
    }

    #[test]
    fn in_flight_bus2_record_resolves_corrected() {
        let mut c = ctl(FaultPlan::none());
        c.handle(2, Op::Read);
        c.arm_transfer_fault(Site::Bus2);
        assert_eq!(c.handle(2, Op::Read), OutcomeClass::Success);
        assert_eq!(c.records.get(0).disposition, Disposition::Corrected);
    }

    #[test]
    fn latency_starts_at_first_error_of_replica() {
        let mut c = ctl(FaultPlan::none());
        c.handle(3, Op::Read);
        c.set_now(SimTime::from_ms(1));
        plant(&mut c, 3, ReplicaKind::Vm, &[(100, 1)]);
        c.set_now(SimTime::from_ms(3));
        let late = plant(&mut c, 3, ReplicaKind::Vm, &[(200, 3)]);
        c.set_now(SimTime::from_ms(4));
        c.handle(3, Op::Read);
        assert_eq!(c.records.get(late).disposition, Disposition::Detected(Mechanism::Edac));
        let s = c.metrics.latency.iter().find(|s| s.disposition == Disposition::Detected(Mechanism::Edac)).unwrap();
        assert_eq!(s.latency_ns, 3 * SimTime::NS_PER_MS);
    }

    #[test]
    fn scope_is_stripped_after_check() {
        let mut c = ctl(FaultPlan::none());
        let mut f = vec![frag(0, 1, 2, Scope::PARITY | Scope::FE)];
        c.records.create(0, Origin::Bus1, SimTime::ZERO, SymbolErrors::new());
        let r = c.check(&mut f, Mechanism::Parity, true);
        assert!(r.abort.is_none());
        assert_eq!(f[0].scope, Scope::FE);
        assert_eq!(c.metrics.coverage[0].missed, 1);
    }
}
