//! Plain-text summary of an output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::codes::Mechanism;
use crate::error::{Error, Result};
use crate::metrics::{BUCKET_NS, LATENCY_SERIES};
use crate::stats::{bimodality, linear_fit, Bimodality, LinearFit};

pub struct RunDir {
    pub summary: Value,
    /// series → bucket → count
    pub latency: BTreeMap<String, BTreeMap<u64, u64>>,
    /// (window, cache, disk, dirty)
    pub faulty: Vec<(u64, f64, f64, f64)>,
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    if !p.exists() {
        return Err(Error::MissingInput(format!("{} not found", p.display())));
    }
    std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
}

fn rows(text: &str, name: &str) -> Result<Vec<Vec<String>>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let v: Vec<String> = l.split(',').map(str::to_string).collect();
            if v.len() < 3 {
                return Err(Error::Config(format!("{name} line {}: too few fields", i + 2)));
            }
            Ok(v)
        })
        .collect()
}

fn field<T: std::str::FromStr>(v: &str, name: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{name}: bad value `{v}`")))
}

impl RunDir {
    pub fn load(dir: &Path) -> Result<Self> {
        let summary: Value = serde_json::from_str(&read(dir, "summary.json")?)?;
        let mut latency: BTreeMap<String, BTreeMap<u64, u64>> = BTreeMap::new();
        for r in rows(&read(dir, "latency_hist.csv")?, "latency_hist.csv")? {
            let b: u64 = field(&r[1], "latency_hist.csv")?;
            let c: u64 = field(&r[2], "latency_hist.csv")?;
            latency.entry(r[0].clone()).or_default().insert(b, c);
        }
        let mut faulty = Vec::new();
        for r in rows(&read(dir, "faulty_fraction.csv")?, "faulty_fraction.csv")? {
            if r.len() < 4 {
                return Err(Error::Config("faulty_fraction.csv: too few fields".into()));
            }
            faulty.push((
                field(&r[0], "faulty_fraction.csv")?,
                field(&r[1], "faulty_fraction.csv")?,
                field(&r[2], "faulty_fraction.csv")?,
                field(&r[3], "faulty_fraction.csv")?,
            ));
        }
        Ok(RunDir {
            summary,
            latency,
            faulty,
        })
    }

    pub fn bimodality(&self) -> Bimodality {
        bimodality(&self.latency.get("ALL").cloned().unwrap_or_default())
    }

    pub fn disk_trend(&self) -> Option<LinearFit> {
        let x: Vec<f64> = self.faulty.iter().map(|r| r.0 as f64).collect();
        let y: Vec<f64> = self.faulty.iter().map(|r| r.2).collect();
        linear_fit(&x, &y)
    }
}

/// Quantile of a bucketed histogram, in ms at bucket midpoints.
pub fn hist_quantile(h: &BTreeMap<u64, u64>, q: f64) -> Option<f64> {
    let total: u64 = h.values().sum();
    if total == 0 {
        return None;
    }
    let target = (q * total as f64).ceil().max(1.0) as u64;
    let mut acc = 0;
    for (&b, &c) in h {
        acc += c;
        if acc >= target {
            return Some((b as f64 + 0.5) * BUCKET_NS as f64 / 1e6);
        }
    }
    None
}

fn opt(x: Option<f64>, prec: usize) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.prec$}"))
}

pub fn render(dir: &Path) -> Result<String> {
    let d = RunDir::load(dir)?;
    let s = &d.summary;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "run: profile={} seed={} duration_h={} requests={}",
        s["profile"].as_str().unwrap_or("?"),
        s["seed"],
        s["duration_h"],
        s["requests"]
    );
    let _ = writeln!(
        out,
        "outcomes: success={:.6} detected_uncorrected={:.3e} undetected={:.3e} unavailable={:.3e}",
        s["p_success"].as_f64().unwrap_or(0.0),
        s["p_detected_uncorrected"].as_f64().unwrap_or(0.0),
        s["p_undetected"].as_f64().unwrap_or(0.0),
        s["p_unavailable"].as_f64().unwrap_or(0.0),
    );
    let _ = writeln!(out, "\ncoverage ({} units)", s["coverage_unit"].as_str().unwrap_or("?"));
    let _ = writeln!(out, "{:<8} {:>10} {:>10} {:>10} {:>8} {:>9}", "mech", "checked", "detected", "corrected", "missed", "coverage");
    for m in Mechanism::ALL {
        let c = &s["coverage"][m.name()];
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>10} {:>10} {:>8} {:>9}",
            m.name(),
            c["checked"],
            c["detected"],
            c["corrected"],
            c["missed"],
            opt(c["coverage"].as_f64(), 6)
        );
    }
    let _ = writeln!(out, "\nlatency (ms)");
    let _ = writeln!(out, "{:<9} {:>9} {:>11} {:>11} {:>11}", "origin", "n", "p10", "p50", "p90");
    for name in LATENCY_SERIES {
        let h = d.latency.get(name).cloned().unwrap_or_default();
        let n: u64 = h.values().sum();
        let _ = writeln!(
            out,
            "{:<9} {:>9} {:>11} {:>11} {:>11}",
            name,
            n,
            opt(hist_quantile(&h, 0.1), 1),
            opt(hist_quantile(&h, 0.5), 1),
            opt(hist_quantile(&h, 0.9), 1)
        );
    }
    let b = d.bimodality();
    let peaks: Vec<String> = b.peaks.iter().map(|p| format!("{:.1}", (10f64.powf(*p) - 1.0) / 10.0)).collect();
    let _ = writeln!(
        out,
        "\noverall latency: {} (modes={}, peaks near ms=[{}], Ashman D={:.2})",
        if b.is_bimodal() { "bimodal" } else { "not bimodal" },
        b.modes,
        peaks.join(", "),
        b.ashman_d
    );
    match d.disk_trend() {
        Some(f) => {
            let _ = writeln!(out, "disk faulty fraction trend: slope={:.3e}/window p={:.3e}", f.slope, f.p_value);
        }
        None => {
            let _ = writeln!(out, "disk faulty fraction trend: n/a (fewer than 3 windows)");
        }
    }
    let cache_max = d.faulty.iter().map(|r| r.1).fold(0.0, f64::max);
    let _ = writeln!(out, "cache faulty fraction max: {cache_max:.4}");
    let _ = writeln!(
        out,
        "reconstructions: {} (mean rate {:.3e}/ms), data-loss events: {}, availability: {}",
        s["reconstructions"],
        s["mean_reconstruction_rate_per_ms"].as_f64().unwrap_or(0.0),
        s["data_loss_events"],
        s["availability"]
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_of_histogram() {
        let h: BTreeMap<u64, u64> = [(0, 5), (10, 5)].into_iter().collect();
        assert_eq!(hist_quantile(&h, 0.5), Some(0.05));
        assert_eq!(hist_quantile(&h, 0.9), Some(1.05));
        assert_eq!(hist_quantile(&BTreeMap::new(), 0.5), None);
    }

    #[test]
    fn missing_dir_is_user_error() {
        let e = render(Path::new("/nonexistent/run")).unwrap_err();
        assert!(e.is_user_error());
    }
}
