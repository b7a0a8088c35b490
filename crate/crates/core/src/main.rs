use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dependasim::config::{format_duration, parse_duration, RunConfig, DEFAULT_PROFILE};
use dependasim::error::{Error, Result};
use dependasim::kernel::{RngFactory, RngStream, SimTime};
use dependasim::level3::{calibrate_all, BurstTable};
use dependasim::sim::{burst_table_for, run_many, run_to_dir};
use dependasim::workload::{gen_synthetic, stats, write_trace, OpMix};

#[derive(Parser)]
#[command(name = "dependasim", version, about = "Fault-injection simulator of a cached disk-array controller")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file, applied over the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile: paper or desk.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, env = "DEPENDASIM_SEED")]
    seed: Option<u64>,
    /// Simulated time, e.g. 24h, 90m, 3600s.
    #[arg(long)]
    duration: Option<String>,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulation and write metric files.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Independent runs with consecutive seeds, merged summary.
        #[arg(long, default_value_t = 1)]
        runs: u32,
        /// Compute the burst table if the configured file is missing.
        #[arg(long)]
        calibrate: bool,
        #[arg(long)]
        burst_table: Option<PathBuf>,
        /// Replay a trace instead of the synthetic workload.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Estimate burst-length distributions and write the table.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = "burst_table.csv")]
        out: PathBuf,
    },
    /// Write a synthetic trace.
    GenTrace {
        #[command(flatten)]
        common: Common,
        /// Number of requests (default: everything within --duration).
        #[arg(long)]
        n: Option<u64>,
        /// Op mix override `read,fast_write,write_through`.
        #[arg(long)]
        mix: Option<String>,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Summarize an output directory.
    Report {
        #[arg(default_value = "out")]
        out_dir: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p, c.profile.as_deref())?,
        None => RunConfig::profile(c.profile.as_deref().unwrap_or(DEFAULT_PROFILE))?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = &c.duration {
        cfg.duration = parse_duration(d).map_err(|m| Error::field("--duration", m))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(
    common: &Common,
    out_dir: &Path,
    runs: u32,
    calibrate: bool,
    burst_table: Option<PathBuf>,
    trace: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if burst_table.is_some() {
        cfg.burst_table = burst_table;
    }
    if trace.is_some() {
        cfg.trace = trace;
    }
    if runs == 0 {
        return Err(Error::field("--runs", "must be ≥ 1"));
    }
    let t0 = Instant::now();
    let burst = burst_table_for(&cfg, calibrate)?;
    if common.verbose {
        eprintln!("burst table ready in {:.1}s", t0.elapsed().as_secs_f64());
    }
    let summary = if runs == 1 {
        run_to_dir(&cfg, burst, out_dir)?.summary()?
    } else {
        run_many(&cfg, &burst, runs, out_dir)?
    };
    if common.verbose {
        eprintln!("simulated {} in {:.1}s", format_duration(cfg.duration), t0.elapsed().as_secs_f64());
    }
    println!(
        "requests={} p_success={} p_detected_uncorrected={} p_undetected={} p_unavailable={}",
        summary["requests"],
        summary["p_success"],
        summary["p_detected_uncorrected"],
        summary["p_undetected"],
        summary["p_unavailable"]
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_calibrate(common: &Common, trials: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = trials {
        cfg.calibration_trials = n;
    }
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
    let table = BurstTable::from_summaries(&sums)?;
    let f = File::create(out).map_err(|e| Error::io(out, e))?;
    table.write_csv(BufWriter::new(f)).map_err(|e| Error::io(out, e))?;
    for s in &sums {
        println!("{:<9} mean={:.1} sd={:.1} n={}", s.site.name(), s.mean, s.sd, s.n);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_mix(s: &str) -> Result<OpMix> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::field("--mix", e.to_string()))?;
    let [read, fast_write, write_through] = v[..] else {
        return Err(Error::field("--mix", "expected three comma-separated values"));
    };
    Ok(OpMix {
        read,
        fast_write,
        write_through,
    })
}

fn cmd_gen_trace(common: &Common, n: Option<u64>, mix: Option<String>, out: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(m) = mix {
        cfg.workload.mix = parse_mix(&m)?;
    }
    let mut rngs = RngFactory::new(cfg.seed);
    let gen = gen_synthetic(&cfg.workload, rngs.fork("workload")?)?;
    let reqs: Vec<_> = match n {
        Some(n) => gen.take(n as usize).collect(),
        None => {
            let end: SimTime = cfg.duration;
            gen.take_while(|r| r.arrival <= end).collect()
        }
    };
    let f = File::create(out).map_err(|e| Error::io(out, e))?;
    write_trace(BufWriter::new(f), reqs.iter().copied()).map_err(|e| Error::io(out, e))?;
    let st = stats(reqs.iter().copied());
    let (r, fw, wt) = st.mix_fractions();
    println!(
        "requests={} top100_share={:.4} mix={:.4}/{:.4}/{:.4} mean_interarrival_ms={}",
        st.total,
        st.top_k_share(100),
        r,
        fw,
        wt,
        st.mean_interarrival_ms().map_or("n/a".into(), |m| format!("{m:.4}"))
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run {
            common,
            out_dir,
            runs,
            calibrate,
            burst_table,
            trace,
        } => cmd_run(&common, &out_dir, runs, calibrate, burst_table, trace),
        Cmd::Calibrate { common, trials, out } => cmd_calibrate(&common, trials, &out),
        Cmd::GenTrace { common, n, mix, out } => cmd_gen_trace(&common, n, mix, &out),
        Cmd::Report { out_dir } => dependasim::report::render(&out_dir).map(|s| print!("{s}")),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 3 })
        }
    }
}
