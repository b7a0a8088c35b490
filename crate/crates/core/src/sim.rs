//! Event loop of one run: request arrivals, fault arrivals, component
//! failures and repairs, periodic write-back, rebuild steps and metric
//! windows.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::kernel::{RngFactory, RngStream, Scheduler, SimTime};
use crate::level2::{Component, Controller, FaultPlan, StoredTarget, TransferModel};
use crate::level3::{calibrate_all, BurstTable, Site};
use crate::metrics::{Metrics, RunInfo};
use crate::level2::ledger::RecordStore;
use crate::workload::{gen_synthetic, open_trace, TrackRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Arrival,
    TransferFault(Site),
    Stored(StoredTarget),
    Fail(Component),
    Repair(Component),
    Writeback,
    Rebuild(u32),
    Window,
}

/// Burst table for `cfg`: the configured file, or an in-process
/// calibration. A configured file that does not exist is an error unless
/// `calibrate` is set.
pub fn burst_table_for(cfg: &RunConfig, calibrate: bool) -> Result<BurstTable> {
    if let Some(p) = &cfg.burst_table {
        if p.exists() {
            let f = File::open(p).map_err(|e| Error::io(p, e))?;
            let t = BurstTable::read_csv(BufReader::new(f))?;
            t.require_all()?;
            return Ok(t);
        }
        if !calibrate {
            return Err(Error::MissingInput(format!(
                "burst table {} not found (pass --calibrate to compute it)",
                p.display()
            )));
        }
    }
    calibrate_table(cfg)
}

pub fn calibrate_table(cfg: &RunConfig) -> Result<BurstTable> {
    let rng = RngStream::derive(cfg.seed, "level3-calibration");
    let sums = calibrate_all(
        cfg.calibration_trials,
        &cfg.controller.timing,
        &cfg.lambdas,
        cfg.fault_duration_ns,
        cfg.controller.geometry,
        cfg.seed,
        &rng,
    )?;
    BurstTable::from_summaries(&sums)
}

pub struct RunOutput {
    pub metrics: Metrics,
    pub records: RecordStore,
    pub info: RunInfo,
    pub events: u64,
}

impl RunOutput {
    pub fn summary(&self) -> Result<Value> {
        self.metrics.summary(&self.records, &self.info)
    }

    pub fn export(&self, out_dir: &Path) -> Result<()> {
        self.metrics.export(out_dir, &self.records, &self.info)
    }
}

pub struct Simulation {
    cfg: RunConfig,
    ctl: Controller,
    sched: Scheduler<Ev>,
    source: Box<dyn Iterator<Item = Result<TrackRequest>> + Send>,
    next_req: Option<TrackRequest>,
    arrivals: RngStream,
    permanent: RngStream,
    t_end: SimTime,
    last_window: SimTime,
    finished: bool,
}

impl Simulation {
    pub fn new(cfg: RunConfig, burst: BurstTable) -> Result<Self> {
        cfg.validate()?;
        let mut rngs = RngFactory::new(cfg.seed);
        let workload_rng = rngs.fork("workload")?;
        let source: Box<dyn Iterator<Item = Result<TrackRequest>> + Send> = match &cfg.trace {
            Some(p) => Box::new(open_trace(p, cfg.controller.n_tracks)?),
            None => Box::new(gen_synthetic(&cfg.workload, workload_rng)?.map(Ok)),
        };
        let ctl = Controller::new(cfg.controller.clone(), burst, &mut rngs)?;
        let mut sim = Simulation {
            t_end: cfg.duration,
            arrivals: rngs.fork("fault-arrivals")?,
            permanent: rngs.fork("permanent-failures")?,
            ctl,
            sched: Scheduler::new(),
            source,
            next_req: None,
            last_window: SimTime::ZERO,
            finished: false,
            cfg,
        };
        sim.prime()?;
        Ok(sim)
    }

    pub fn set_event_log(&mut self, sink: Box<dyn std::io::Write + Send>) {
        self.ctl.set_event_log(sink);
    }

    pub fn controller(&self) -> &Controller {
        &self.ctl
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn t_end(&self) -> SimTime {
        self.t_end
    }

    fn exp_gap<R: Rng + ?Sized>(rng: &mut R, per_h: f64) -> Option<SimTime> {
        let mean = FaultPlan::mean_gap(per_h)?;
        let x = Exp::new(1.0 / mean.as_ns() as f64).expect("positive rate").sample(rng);
        Some(SimTime::from_ns(x.ceil().max(1.0) as u64))
    }

    fn schedule_gap(&mut self, per_h: f64, ev: Ev, permanent: bool) {
        let rng = if permanent { &mut self.permanent } else { &mut self.arrivals };
        if let Some(gap) = Self::exp_gap(rng, per_h) {
            let at = self.sched.now() + gap;
            if at <= self.t_end {
                self.sched.schedule(at, ev);
            }
        }
    }

    fn components(&self) -> Vec<(Component, f64)> {
        let c = &self.cfg.controller;
        let f = &c.faults;
        let mut v = Vec::new();
        v.extend((0..c.cci_chan).map(|i| (Component::CciChan(i), f.perm_cache_per_h)));
        v.extend((0..c.cci_mem).map(|i| (Component::CciMem(i), f.perm_cache_per_h)));
        v.extend((0..c.memory_cards).map(|i| (Component::Card(i), f.perm_cache_per_h)));
        v.extend((0..c.n_data_disks + 2).map(|i| (Component::Disk(i), f.perm_disk_per_h)));
        v
    }

    fn fail_rate(&self, c: Component) -> f64 {
        match c {
            Component::Disk(_) => self.cfg.controller.faults.perm_disk_per_h,
            _ => self.cfg.controller.faults.perm_cache_per_h,
        }
    }

    fn prime(&mut self) -> Result<()> {
        let w = self.cfg.controller.window_len;
        let mut t = w;
        while t <= self.t_end {
            self.sched.schedule(t, Ev::Window);
            t = t + w;
        }
        self.pull_request()?;
        let f = self.cfg.controller.faults.clone();
        if f.transfer_model == TransferModel::Armed {
            for s in Site::ALL {
                self.schedule_gap(f.site_per_h(s), Ev::TransferFault(s), false);
            }
        }
        self.schedule_gap(f.cm_per_h, Ev::Stored(StoredTarget::CacheMemory), false);
        self.schedule_gap(f.disk_per_h, Ev::Stored(StoredTarget::Disk), false);
        for (c, rate) in self.components() {
            self.schedule_gap(rate, Ev::Fail(c), true);
        }
        let p = self.cfg.writeback_period;
        if p <= self.t_end {
            self.sched.schedule(p, Ev::Writeback);
        }
        Ok(())
    }

    fn pull_request(&mut self) -> Result<()> {
        self.next_req = None;
        if let Some(r) = self.source.next() {
            let r = r?;
            let at = r.arrival.max(self.sched.now());
            if at <= self.t_end {
                self.next_req = Some(r);
                self.sched.schedule(at, Ev::Arrival);
            }
        }
        Ok(())
    }

    /// Dispatch events up to and including `t` (capped at the run end).
    /// Returns whether the run has reached its end.
    pub fn run_until(&mut self, t: SimTime) -> Result<bool> {
        let t = t.min(self.t_end);
        while let Some(ev) = self.sched.pop_until(t) {
            self.dispatch(ev.kind)?;
        }
        self.sched.advance_to(t);
        self.ctl.set_now(t.max(self.ctl.now()));
        if t == self.t_end && !self.finished {
            self.finish_run();
        }
        Ok(self.finished)
    }

    fn finish_run(&mut self) {
        if self.last_window < self.t_end {
            self.ctl.close_window(self.t_end);
            self.last_window = self.t_end;
        }
        self.ctl.finish(self.t_end);
        self.finished = true;
    }

    fn dispatch(&mut self, ev: Ev) -> Result<()> {
        let now = self.sched.now();
        self.ctl.set_now(now);
        match ev {
            Ev::Arrival => {
                if let Some(r) = self.next_req.take() {
                    self.ctl.handle(r.track, r.op);
                }
                self.pull_request()?;
            }
            Ev::TransferFault(site) => {
                self.ctl.arm_transfer_fault(site);
                let rate = self.cfg.controller.faults.site_per_h(site);
                self.schedule_gap(rate, ev, false);
            }
            Ev::Stored(target) => {
                self.ctl.inject_time_dependent(target);
                let f = &self.cfg.controller.faults;
                let rate = match target {
                    StoredTarget::CacheMemory => f.cm_per_h,
                    StoredTarget::Disk => f.disk_per_h,
                };
                self.schedule_gap(rate, ev, false);
            }
            Ev::Fail(c) => {
                self.ctl.fail_component(c);
                match c {
                    Component::Disk(d) => self.sched.schedule(now, Ev::Rebuild(d)),
                    _ => {
                        let mean_h = self.cfg.controller.faults.repair_mean_h;
                        self.schedule_gap(1.0 / mean_h, Ev::Repair(c), true);
                    }
                }
            }
            Ev::Repair(c) => {
                self.ctl.repair_component(c);
                let rate = self.fail_rate(c);
                self.schedule_gap(rate, Ev::Fail(c), true);
            }
            Ev::Rebuild(d) => match self.ctl.rebuild_step(d) {
                Some(delay) => {
                    if now + delay <= self.t_end {
                        self.sched.schedule(now + delay, ev);
                    }
                }
                None => {
                    let rate = self.fail_rate(Component::Disk(d));
                    self.schedule_gap(rate, Ev::Fail(Component::Disk(d)), true);
                }
            },
            Ev::Writeback => {
                self.ctl.writeback_flush();
                let next = now + self.cfg.writeback_period;
                if next <= self.t_end {
                    self.sched.schedule(next, Ev::Writeback);
                }
            }
            Ev::Window => {
                self.ctl.close_window(now);
                self.last_window = now;
                self.ctl.check_invariants().map_err(Error::Invariant)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunOutput> {
        if !self.finished {
            self.run_until(self.t_end)?;
        }
        let events = self.sched.dispatched();
        let info = RunInfo {
            profile: self.cfg.profile.clone(),
            seed: self.cfg.seed,
            duration: self.t_end,
        };
        Ok(RunOutput {
            metrics: self.ctl.metrics,
            records: self.ctl.records,
            info,
            events,
        })
    }
}

/// Run `cfg` to completion.
pub fn run(cfg: &RunConfig, burst: BurstTable) -> Result<RunOutput> {
    Simulation::new(cfg.clone(), burst)?.finish()
}

/// Run and write the metric files (and the event log if enabled).
pub fn run_to_dir(cfg: &RunConfig, burst: BurstTable, out_dir: &Path) -> Result<RunOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut sim = Simulation::new(cfg.clone(), burst)?;
    if cfg.event_log {
        let p = out_dir.join("events.jsonl");
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        sim.set_event_log(Box::new(BufWriter::new(f)));
    }
    let out = sim.finish()?;
    out.export(out_dir)?;
    let p = out_dir.join("config.txt");
    std::fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
    Ok(out)
}

/// `n` runs with seeds `seed, seed+1, …` in parallel, each in `run_<k>`,
/// plus a merged `summary.json` in `out_dir`.
pub fn run_many(cfg: &RunConfig, burst: &BurstTable, n: u32, out_dir: &Path) -> Result<Value> {
    let results: Vec<Result<Value>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|k| {
                let mut c = cfg.clone();
                c.seed = cfg.seed.wrapping_add(k as u64);
                let dir = out_dir.join(format!("run_{k}"));
                let burst = burst.clone();
                s.spawn(move || run_to_dir(&c, burst, &dir).and_then(|o| o.summary()))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invariant("simulation thread panicked".into()))))
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let merged = merge_summaries(&summaries);
    let p = out_dir.join("summary.json");
    std::fs::write(&p, serde_json::to_string_pretty(&merged)? + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(merged)
}

/// Pool per-run summaries: counts add up, probabilities are recomputed from
/// the pooled outcome counts.
pub fn merge_summaries(runs: &[Value]) -> Value {
    use crate::codes::Mechanism;
    use crate::level2::OutcomeClass;
    let sum = |f: &dyn Fn(&Value) -> Option<u64>| runs.iter().filter_map(f).sum::<u64>();
    let mut outcomes = serde_json::Map::new();
    let mut counts = [0u64; 4];
    for (i, o) in OutcomeClass::ALL.into_iter().enumerate() {
        counts[i] = sum(&|v| v["outcomes"][o.name()].as_u64());
        outcomes.insert(o.name().into(), json!(counts[i]));
    }
    let total: u64 = counts.iter().sum();
    let p = |i: usize| if total == 0 { [1.0, 0.0, 0.0, 0.0][i] } else { counts[i] as f64 / total as f64 };
    let mut cov = serde_json::Map::new();
    for name in Mechanism::ALL.map(Mechanism::name).into_iter().chain(["CRC"]) {
        let g = |k: &str| sum(&|v| v["coverage"][name][k].as_u64());
        let (checked, detected) = (g("checked"), g("detected"));
        cov.insert(
            name.into(),
            json!({
                "checked": checked, "detected": detected,
                "corrected": g("corrected"), "missed": g("missed"),
                "coverage": (checked > 0).then(|| detected as f64 / checked as f64),
            }),
        );
    }
    json!({
        "runs": runs.len(),
        "seeds": runs.iter().map(|v| v["seed"].clone()).collect::<Vec<_>>(),
        "requests": total,
        "outcomes": outcomes,
        "p_success": p(0),
        "p_detected_uncorrected": p(1),
        "p_undetected": p(2),
        "p_unavailable": p(3),
        "coverage": cov,
        "crc_escapes": sum(&|v| v["crc_escapes"].as_u64()),
        "records_total": sum(&|v| v["records_total"].as_u64()),
        "reconstructions": sum(&|v| v["reconstructions"].as_u64()),
        "data_loss_events": sum(&|v| v["data_loss_events"].as_u64()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level2::OutcomeClass;

    fn small() -> RunConfig {
        let mut c = RunConfig::desk();
        c.duration = SimTime::from_secs(120);
        c.controller.window_len = SimTime::from_secs(30);
        c.calibration_trials = 200;
        c
    }

    #[test]
    fn zero_fault_run_is_all_success() {
        let cfg = small().without_faults();
        let out = run(&cfg, calibrate_table(&cfg).unwrap()).unwrap();
        let n = out.metrics.total_requests();
        assert!(n > 20_000, "{n}");
        assert_eq!(out.metrics.outcome_count(OutcomeClass::Success), n);
        assert!(out.records.is_empty());
        assert_eq!(out.metrics.windows.len(), 4);
    }

    #[test]
    fn partial_last_window() {
        let mut cfg = small().without_faults();
        cfg.duration = SimTime::from_secs(100);
        let out = run(&cfg, calibrate_table(&cfg).unwrap()).unwrap();
        assert_eq!(out.metrics.windows.len(), 4);
        assert_eq!(out.metrics.windows[3].end, SimTime::from_secs(100));
    }

    #[test]
    fn faulty_run_conserves_records() {
        let cfg = small();
        let out = run(&cfg, calibrate_table(&cfg).unwrap()).unwrap();
        assert!(out.records.len() > 100);
        out.summary().unwrap();
    }

    #[test]
    fn stepping_matches_one_shot() {
        let cfg = small();
        let burst = calibrate_table(&cfg).unwrap();
        let a = run(&cfg, burst.clone()).unwrap().summary().unwrap();
        let mut sim = Simulation::new(cfg.clone(), burst).unwrap();
        let mut t = SimTime::ZERO;
        while !sim.run_until(t).unwrap() {
            t = t + SimTime::from_ms(7_777);
        }
        let b = sim.finish().unwrap().summary().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn configured_table_must_exist() {
        let mut cfg = small();
        cfg.burst_table = Some("/nonexistent/bursts.csv".into());
        assert!(matches!(burst_table_for(&cfg, false), Err(Error::MissingInput(_))));
        assert!(burst_table_for(&cfg, true).is_ok());
    }

    #[test]
    fn merged_probabilities_pool_counts() {
        let a = json!({"seed": 1, "outcomes": {"SUCCESS": 3, "DETECTED_UNCORRECTED": 1}});
        let b = json!({"seed": 2, "outcomes": {"SUCCESS": 4}});
        let m = merge_summaries(&[a, b]);
        assert_eq!(m["requests"], json!(8));
        assert_eq!(m["p_success"], json!(7.0 / 8.0));
    }
}
