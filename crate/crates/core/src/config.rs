//! Run configuration: flat `section.key=value` text with two built-in
//! profiles.
//!
//! Every key is listed in [`RunConfig::entries`]; that list doubles as the
//! serialization order and the reference for defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codes::Geometry;
use crate::error::{Error, Result};
use crate::kernel::SimTime;
use crate::level1::WriteMode;
use crate::level2::{ControllerConfig, FaultPlan};
use crate::level3::Lambdas;
use crate::workload::{calibrate_skew, WorkloadConfig};

pub const PROFILES: [&str; 2] = ["paper", "desk"];

/// Profile used when neither a flag nor the config file names one.
pub const DEFAULT_PROFILE: &str = "desk";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub duration: SimTime,
    pub workload: WorkloadConfig,
    /// Replay this trace instead of the synthetic generator.
    pub trace: Option<PathBuf>,
    pub controller: ControllerConfig,
    pub writeback_period: SimTime,
    pub lambdas: Lambdas,
    pub fault_duration_ns: u64,
    pub calibration_trials: usize,
    /// Pre-computed burst table; calibrated in-process when absent.
    pub burst_table: Option<PathBuf>,
    pub event_log: bool,
    pub file_span_min: u32,
    pub file_span_max: u32,
    pub write_mode: WriteMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::paper()
    }
}

impl RunConfig {
    /// Full-size array, 24 h.
    pub fn paper() -> Self {
        let n_tracks = 480_000;
        RunConfig {
            profile: "paper".into(),
            seed: 1,
            duration: SimTime::from_secs(24 * 3_600),
            workload: WorkloadConfig::default(),
            trace: None,
            controller: ControllerConfig {
                n_tracks,
                cache_capacity: n_tracks / 20,
                ..ControllerConfig::default()
            },
            writeback_period: SimTime::from_secs(60),
            lambdas: Lambdas::default(),
            fault_duration_ns: 5_000,
            calibration_trials: 10_000,
            burst_table: None,
            event_log: false,
            file_span_min: 1,
            file_span_max: 8,
            write_mode: WriteMode::Fast,
        }
    }

    /// Tracks ÷100, fault rates ×100, 1 h.
    pub fn desk() -> Self {
        let mut c = RunConfig::paper();
        c.profile = "desk".into();
        c.duration = SimTime::from_secs(3_600);
        c.controller.n_tracks = 4_800;
        c.controller.cache_capacity = 240;
        c.workload.n_tracks = 4_800;
        c.workload.n_active = 1_270;
        c.workload.zipf_exponent = calibrate_skew(0.80, 100, 1_270).expect("reachable target");
        let f = &mut c.controller.faults;
        f.bus_per_h *= 100.0;
        f.cci_per_h *= 100.0;
        f.cm_per_h *= 100.0;
        f.disk_per_h *= 100.0;
        f.load_per_bit *= 100.0;
        f.perm_cache_per_h *= 100.0;
        f.perm_disk_per_h *= 100.0;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(RunConfig::paper()),
            "desk" => Ok(RunConfig::desk()),
            o => Err(Error::field("run.profile", format!("unknown profile `{o}` (paper|desk)"))),
        }
    }

    /// All rates zeroed; used for sanity runs.
    pub fn without_faults(mut self) -> Self {
        let model = self.controller.faults.transfer_model;
        self.controller.faults = FaultPlan {
            transfer_model: model,
            ..FaultPlan::none()
        };
        self
    }

    /// Parse `text` over `base`, else the profile the text names, else the
    /// default profile.
    pub fn from_text(text: &str, base: Option<&str>) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let named = pairs.iter().find(|(_, k, _)| k == "run.profile").map(|(_, _, v)| v.as_str());
        let mut cfg = RunConfig::profile(base.or(named).unwrap_or(DEFAULT_PROFILE))?;
        for (line, k, v) in &pairs {
            if k == "run.profile" && base.is_some() {
                continue;
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::ConfigField { key, msg } => Error::ConfigField {
                    key,
                    msg: format!("line {line}: {msg}"),
                },
                o => o,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_text(&text, base)
    }

    /// Serialized form; parses back to an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.workload.n_tracks != self.controller.n_tracks {
            return Err(Error::Invariant("workload and array track counts differ".into()));
        }
        self.workload.validate()?;
        self.controller.validate()?;
        if self.duration == SimTime::ZERO {
            return Err(Error::field("run.duration", "must be positive"));
        }
        if self.writeback_period == SimTime::ZERO {
            return Err(Error::field("cache.writeback_period_s", "must be positive"));
        }
        if self.controller.window_len == SimTime::ZERO {
            return Err(Error::field("metrics.window_s", "must be positive"));
        }
        if self.fault_duration_ns == 0 {
            return Err(Error::field("level3.fault_duration_ns", "must be positive"));
        }
        for (k, v) in [
            ("level3.lambda_bus1", self.lambdas.bus1),
            ("level3.lambda_bus2", self.lambdas.bus2),
            ("level3.lambda_cci_mem", self.lambdas.cci_mem),
            ("level3.lambda_cci_chan", self.lambdas.cci_chan),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::field(k, "must be a positive number"));
            }
        }
        if self.file_span_min == 0 || self.file_span_min > self.file_span_max {
            return Err(Error::field("level1.file_span_min", "need 1 ≤ min ≤ max"));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.workload;
        let c = &self.controller;
        let f = &c.faults;
        let t = &c.timing;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        vec![
            ("run.profile", self.profile.clone()),
            ("run.seed", self.seed.to_string()),
            ("run.duration", format_duration(self.duration)),
            ("workload.n_active", w.n_active.to_string()),
            ("workload.zipf_exponent", w.zipf_exponent.to_string()),
            ("workload.mean_interarrival_ms", (w.mean_interarrival.as_ns() as f64 / 1e6).to_string()),
            ("workload.mix_read", w.mix.read.to_string()),
            ("workload.mix_fast_write", w.mix.fast_write.to_string()),
            ("workload.mix_write_through", w.mix.write_through.to_string()),
            ("workload.trace", path(&self.trace)),
            ("array.n_tracks", c.n_tracks.to_string()),
            ("array.n_data_disks", c.n_data_disks.to_string()),
            ("array.symbols_per_track", c.geometry.symbols_per_record.to_string()),
            ("array.bits_per_symbol", c.geometry.bits_per_symbol.to_string()),
            ("array.rebuild_ms_per_track", (c.rebuild_per_track.as_ns() as f64 / 1e6).to_string()),
            ("cache.capacity_tracks", c.cache_capacity.to_string()),
            ("cache.memory_cards", c.memory_cards.to_string()),
            ("cache.cci_chan", c.cci_chan.to_string()),
            ("cache.cci_mem", c.cci_mem.to_string()),
            ("cache.dirty_threshold", c.dirty_threshold.to_string()),
            ("cache.read_retries", c.read_retries.to_string()),
            ("cache.soft_retry_success", c.soft_retry_success.to_string()),
            ("cache.edac_check_on_write", c.edac_check_on_write.to_string()),
            ("cache.nvm_stored_injection", c.nvm_stored_injection.to_string()),
            ("cache.writeback_period_s", self.writeback_period.as_secs_f64().to_string()),
            ("faults.bus_per_h", f.bus_per_h.to_string()),
            ("faults.bus1_share", f.bus1_share.to_string()),
            ("faults.cci_per_h", f.cci_per_h.to_string()),
            ("faults.cci_chan_share", f.cci_chan_share.to_string()),
            ("faults.cm_per_h", f.cm_per_h.to_string()),
            ("faults.disk_per_h", f.disk_per_h.to_string()),
            ("faults.load_per_bit", f.load_per_bit.to_string()),
            ("faults.burst_mean_bits", f.burst_mean_bits.to_string()),
            ("faults.burst_sd_bits", f.burst_sd_bits.to_string()),
            ("faults.perm_cache_per_h", f.perm_cache_per_h.to_string()),
            ("faults.perm_disk_per_h", f.perm_disk_per_h.to_string()),
            ("faults.repair_mean_h", f.repair_mean_h.to_string()),
            ("faults.transfer_model", f.transfer_model.name().to_string()),
            ("faults.p_escape", f.p_escape.to_string()),
            ("level3.bus1_ns_per_symbol", t.bus1_ns_per_symbol.to_string()),
            ("level3.bus2_ns_per_symbol", t.bus2_ns_per_symbol.to_string()),
            ("level3.cci_mem_residency_ns", t.cci_mem_residency_ns.to_string()),
            ("level3.cci_chan_residency_ns", t.cci_chan_residency_ns.to_string()),
            ("level3.lambda_bus1", self.lambdas.bus1.to_string()),
            ("level3.lambda_bus2", self.lambdas.bus2.to_string()),
            ("level3.lambda_cci_mem", self.lambdas.cci_mem.to_string()),
            ("level3.lambda_cci_chan", self.lambdas.cci_chan.to_string()),
            ("level3.fault_duration_ns", self.fault_duration_ns.to_string()),
            ("level3.calibration_trials", self.calibration_trials.to_string()),
            ("level3.burst_table", path(&self.burst_table)),
            ("metrics.window_s", self.controller.window_len.as_secs_f64().to_string()),
            ("metrics.coverage_unit", c.coverage_unit.name().to_string()),
            ("metrics.event_log", self.event_log.to_string()),
            ("level1.file_span_min", self.file_span_min.to_string()),
            ("level1.file_span_max", self.file_span_max.to_string()),
            ("level1.write_mode", self.write_mode.name().to_string()),
        ]
    }

    /// Set one key; unknown keys and malformed values are field errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.workload;
        let c = &mut self.controller;
        let v = value;
        match key {
            "run.profile" => {
                if !PROFILES.contains(&v) {
                    return Err(Error::field(key, format!("unknown profile `{v}` (paper|desk)")));
                }
                self.profile = v.into()
            }
            "run.seed" => self.seed = num(key, v)?,
            "run.duration" => self.duration = parse_duration(v).map_err(|m| Error::field(key, m))?,
            "workload.n_active" => w.n_active = num(key, v)?,
            "workload.zipf_exponent" => w.zipf_exponent = num(key, v)?,
            "workload.mean_interarrival_ms" => w.mean_interarrival = ms(key, v)?,
            "workload.mix_read" => w.mix.read = num(key, v)?,
            "workload.mix_fast_write" => w.mix.fast_write = num(key, v)?,
            "workload.mix_write_through" => w.mix.write_through = num(key, v)?,
            "workload.trace" => self.trace = opt_path(v),
            "array.n_tracks" => {
                c.n_tracks = num(key, v)?;
                w.n_tracks = c.n_tracks;
            }
            "array.n_data_disks" => c.n_data_disks = num(key, v)?,
            "array.symbols_per_track" => {
                c.geometry = Geometry {
                    symbols_per_record: num(key, v)?,
                    ..c.geometry
                }
            }
            "array.bits_per_symbol" => {
                c.geometry = Geometry {
                    bits_per_symbol: num(key, v)?,
                    ..c.geometry
                }
            }
            "array.rebuild_ms_per_track" => c.rebuild_per_track = ms(key, v)?,
            "cache.capacity_tracks" => c.cache_capacity = num(key, v)?,
            "cache.memory_cards" => c.memory_cards = num(key, v)?,
            "cache.cci_chan" => c.cci_chan = num(key, v)?,
            "cache.cci_mem" => c.cci_mem = num(key, v)?,
            "cache.dirty_threshold" => c.dirty_threshold = num(key, v)?,
            "cache.read_retries" => c.read_retries = num(key, v)?,
            "cache.soft_retry_success" => c.soft_retry_success = num(key, v)?,
            "cache.edac_check_on_write" => c.edac_check_on_write = num(key, v)?,
            "cache.nvm_stored_injection" => c.nvm_stored_injection = num(key, v)?,
            "cache.writeback_period_s" => self.writeback_period = secs(key, v)?,
            "faults.bus_per_h" => c.faults.bus_per_h = num(key, v)?,
            "faults.bus1_share" => c.faults.bus1_share = num(key, v)?,
            "faults.cci_per_h" => c.faults.cci_per_h = num(key, v)?,
            "faults.cci_chan_share" => c.faults.cci_chan_share = num(key, v)?,
            "faults.cm_per_h" => c.faults.cm_per_h = num(key, v)?,
            "faults.disk_per_h" => c.faults.disk_per_h = num(key, v)?,
            "faults.load_per_bit" => c.faults.load_per_bit = num(key, v)?,
            "faults.burst_mean_bits" => c.faults.burst_mean_bits = num(key, v)?,
            "faults.burst_sd_bits" => c.faults.burst_sd_bits = num(key, v)?,
            "faults.perm_cache_per_h" => c.faults.perm_cache_per_h = num(key, v)?,
            "faults.perm_disk_per_h" => c.faults.perm_disk_per_h = num(key, v)?,
            "faults.repair_mean_h" => c.faults.repair_mean_h = num(key, v)?,
            "faults.transfer_model" => c.faults.transfer_model = v.parse().map_err(|m| Error::field(key, m))?,
            "faults.p_escape" => c.faults.p_escape = num(key, v)?,
            "level3.bus1_ns_per_symbol" => c.timing.bus1_ns_per_symbol = num(key, v)?,
            "level3.bus2_ns_per_symbol" => c.timing.bus2_ns_per_symbol = num(key, v)?,
            "level3.cci_mem_residency_ns" => c.timing.cci_mem_residency_ns = num(key, v)?,
            "level3.cci_chan_residency_ns" => c.timing.cci_chan_residency_ns = num(key, v)?,
            "level3.lambda_bus1" => self.lambdas.bus1 = num(key, v)?,
            "level3.lambda_bus2" => self.lambdas.bus2 = num(key, v)?,
            "level3.lambda_cci_mem" => self.lambdas.cci_mem = num(key, v)?,
            "level3.lambda_cci_chan" => self.lambdas.cci_chan = num(key, v)?,
            "level3.fault_duration_ns" => self.fault_duration_ns = num(key, v)?,
            "level3.calibration_trials" => self.calibration_trials = num(key, v)?,
            "level3.burst_table" => self.burst_table = opt_path(v),
            "metrics.window_s" => c.window_len = secs(key, v)?,
            "metrics.coverage_unit" => c.coverage_unit = v.parse().map_err(|m| Error::field(key, m))?,
            "metrics.event_log" => self.event_log = num(key, v)?,
            "level1.file_span_min" => self.file_span_min = num(key, v)?,
            "level1.file_span_max" => self.file_span_max = num(key, v)?,
            "level1.write_mode" => self.write_mode = v.parse().map_err(|m| Error::field(key, m))?,
            _ => return Err(Error::field(key, "unknown key")),
        }
        Ok(())
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(_, seen, _)| *seen == k) {
            return Err(Error::field(&k, format!("line {}: duplicate key", i + 1)));
        }
        out.push((i + 1, k, v));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::field(key, format!("`{v}`: {e}")))
}

fn ms(key: &str, v: &str) -> Result<SimTime> {
    let x: f64 = num(key, v)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::field(key, "must be a finite value ≥ 0"));
    }
    Ok(SimTime::from_ns((x * 1e6).round() as u64))
}

fn secs(key: &str, v: &str) -> Result<SimTime> {
    let x: f64 = num(key, v)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::field(key, "must be a finite value ≥ 0"));
    }
    Ok(SimTime::from_ns((x * 1e9).round() as u64))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// `24h`, `90m`, `3600s`, `250ms`; a bare number is seconds.
pub fn parse_duration(s: &str) -> std::result::Result<SimTime, String> {
    let s = s.trim();
    let split = s.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(s.len());
    let (n, unit) = s.split_at(split);
    let x: f64 = n.parse().map_err(|_| format!("bad duration `{s}`"))?;
    let ns_per = match unit {
        "h" => SimTime::NS_PER_H,
        "m" | "min" => 60 * SimTime::NS_PER_S,
        "s" | "" => SimTime::NS_PER_S,
        "ms" => SimTime::NS_PER_MS,
        "us" => SimTime::NS_PER_US,
        "ns" => 1,
        u => return Err(format!("unknown duration unit `{u}` in `{s}`")),
    };
    if !(x >= 0.0 && x.is_finite()) {
        return Err(format!("bad duration `{s}`"));
    }
    Ok(SimTime::from_ns((x * ns_per as f64).round() as u64))
}

/// Shortest exact rendering in the largest whole unit.
pub fn format_duration(t: SimTime) -> String {
    let ns = t.as_ns();
    for (unit, per) in [
        ("h", SimTime::NS_PER_H),
        ("m", 60 * SimTime::NS_PER_S),
        ("s", SimTime::NS_PER_S),
        ("ms", SimTime::NS_PER_MS),
        ("us", SimTime::NS_PER_US),
    ] {
        if ns > 0 && ns.is_multiple_of(per) {
            return format!("{}{unit}", ns / per);
        }
    }
    format!("{ns}ns")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level2::TransferModel;

    #[test]
    fn profiles_round_trip() {
        for p in PROFILES {
            let c = RunConfig::profile(p).unwrap();
            c.validate().unwrap();
            let back = RunConfig::from_text(&c.to_text(), None).unwrap();
            assert_eq!(back, c, "{p}");
        }
    }

    #[test]
    fn desk_is_scaled() {
        let d = RunConfig::desk();
        assert_eq!(d.controller.n_tracks, 4_800);
        assert_eq!(d.controller.cache_capacity, 240);
        assert_eq!(d.controller.faults.bus_per_h, 10_000.0);
        assert_eq!(d.duration, SimTime::from_secs(3_600));
        let p = RunConfig::paper();
        assert_eq!(p.controller.cache_capacity, 24_000);
    }

    #[test]
    fn overlay_and_errors() {
        let c = RunConfig::from_text("# c\nrun.profile=desk\nfaults.transfer_model = window\n", None).unwrap();
        assert_eq!(c.profile, "desk");
        assert_eq!(c.controller.faults.transfer_model, TransferModel::Window);
        let e = RunConfig::from_text("faults.nope=1", None).unwrap_err();
        assert!(matches!(e, Error::ConfigField { ref key, .. } if key == "faults.nope"));
        assert!(RunConfig::from_text("faults.cm_per_h=-1", None).is_err());
        assert!(RunConfig::from_text("run.seed=1\nrun.seed=2", None).is_err());
        assert!(RunConfig::from_text("garbage", None).is_err());
        assert!(RunConfig::from_text("cache.capacity_tracks=500000", None).is_err());
    }

    #[test]
    fn explicit_base_wins_over_file_profile() {
        let c = RunConfig::from_text("run.profile=paper\nrun.seed=9", Some("desk")).unwrap();
        assert_eq!((c.profile.as_str(), c.seed), ("desk", 9));
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("24h").unwrap(), SimTime::from_secs(86_400));
        assert_eq!(parse_duration("90m").unwrap(), SimTime::from_secs(5_400));
        assert_eq!(parse_duration("3600s").unwrap(), SimTime::from_secs(3_600));
        assert_eq!(parse_duration("1.5h").unwrap(), SimTime::from_secs(5_400));
        assert!(parse_duration("3 days").is_err());
        assert_eq!(format_duration(SimTime::from_secs(5_400)), "90m");
        assert_eq!(format_duration(SimTime::from_secs(86_400)), "24h");
    }
}
