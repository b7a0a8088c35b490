use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dependasim_ffi::*;

fn last_error() -> String {
    let p = ds_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_sim(profile: Option<&str>, text: Option<&str>, seed: u64) -> (DsStatus, *mut DsSimulation) {
    let profile = profile.map(|s| CString::new(s).unwrap());
    let text = text.map(|s| CString::new(s).unwrap());
    let mut sim = ptr::null_mut();
    let st = unsafe {
        ds_simulation_new(
            profile.as_ref().map_or(ptr::null(), |c| c.as_ptr()),
            text.as_ref().map_or(ptr::null(), |c| c.as_ptr()),
            seed,
            &mut sim,
        )
    };
    (st, sim)
}

fn summary(sim: *const DsSimulation) -> serde_json::Value {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ds_simulation_summary_json(sim, &mut s) }, DsStatus::Ok);
    let v = serde_json::from_str(unsafe { CStr::from_ptr(s) }.to_str().unwrap()).unwrap();
    unsafe { ds_string_free(s) };
    v
}

const SHORT: &str = "run.duration = 2m\n";

#[test]
fn stepwise_run_matches_one_shot() {
    let (st, a) = new_sim(Some("desk"), Some(SHORT), 5);
    assert_eq!(st, DsStatus::Ok);
    let (mut now, mut end) = (0, 0);
    assert_eq!(unsafe { ds_simulation_time(a, &mut now, &mut end) }, DsStatus::Ok);
    assert_eq!((now, end), (0, 120_000_000_000));
    let mut done = false;
    let mut t = 0;
    while !done {
        t += 7_000_000_000;
        assert_eq!(unsafe { ds_simulation_run_until(a, t, &mut done) }, DsStatus::Ok);
    }
    assert_eq!(unsafe { ds_simulation_finish(a) }, DsStatus::Ok);

    let (_, b) = new_sim(Some("desk"), Some(SHORT), 5);
    assert_eq!(unsafe { ds_simulation_finish(b) }, DsStatus::Ok);
    let (sa, sb) = (summary(a), summary(b));
    assert_eq!(sa, sb);
    assert_eq!(sa["seed"], 5);
    assert!(sa["requests"].as_u64().unwrap() > 10_000);
    unsafe {
        ds_simulation_free(a);
        ds_simulation_free(b);
    }
}

#[test]
fn export_writes_metric_files() {
    let (_, sim) = new_sim(None, Some(SHORT), 1);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ds_simulation_export(sim, path.as_ptr()) }, DsStatus::State);
    assert_eq!(unsafe { ds_simulation_finish(sim) }, DsStatus::Ok);
    assert_eq!(unsafe { ds_simulation_finish(sim) }, DsStatus::Ok);
    assert_eq!(unsafe { ds_simulation_export(sim, path.as_ptr()) }, DsStatus::Ok);
    for f in ["summary.json", "coverage.csv", "latency_hist.csv", "faulty_fraction.csv", "reconstruction.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    assert_eq!(unsafe { ds_simulation_run_until(sim, 1, ptr::null_mut()) }, DsStatus::State);
    unsafe { ds_simulation_free(sim) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let (st, sim) = new_sim(Some("laptop"), None, 0);
    assert_eq!(st, DsStatus::Config);
    assert!(sim.is_null());
    assert!(last_error().contains("laptop"));

    let (st, _) = new_sim(None, Some("cache.capacity_tracks = lots\n"), 0);
    assert_eq!(st, DsStatus::Config);
    assert!(last_error().contains("cache.capacity_tracks"));

    let (st, _) = new_sim(None, Some("level3.burst_table = /nonexistent/burst.csv\n"), 0);
    assert_eq!(st, DsStatus::MissingInput, "{}", last_error());

    assert_eq!(unsafe { ds_simulation_finish(ptr::null_mut()) }, DsStatus::NullArgument);
    let bad = [0xffu8, 0];
    let mut out = ptr::null_mut();
    let st = unsafe { ds_simulation_new(bad.as_ptr().cast(), ptr::null(), 0, &mut out) };
    assert_eq!(st, DsStatus::InvalidUtf8);

    // A successful call clears the message.
    let (st, sim) = new_sim(None, Some(SHORT), 0);
    assert_eq!(st, DsStatus::Ok);
    assert!(ds_last_error().is_null());
    unsafe {
        ds_simulation_free(sim);
        ds_simulation_free(ptr::null_mut());
        ds_string_free(ptr::null_mut());
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ds_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dependasim.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for sym in [
        "typedef struct DsSimulation DsSimulation",
        "DS_STATUS_MISSING_INPUT = 4",
        "ds_simulation_new",
        "ds_simulation_run_until",
        "ds_simulation_time",
        "ds_simulation_finish",
        "ds_simulation_summary_json",
        "ds_simulation_export",
        "ds_simulation_free",
        "ds_string_free",
        "ds_last_error",
        "ds_version",
    ] {
        assert!(text.contains(sym), "header lacks `{sym}`");
    }
    // Syntax-check as C when a compiler is around.
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("cc not found; skipped C syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
