use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tension_ffi::*;

const GEODESIC: &str = r#"
seed = 3

[mesh]
topology = "interval_dirichlet"
nodes = [17]
lengths = [1.0]

[target]
kind = "hyperboloid"
dim = 2

[map]
kind = "linear"
from = [-0.4, 0.2]
to = [0.9, -0.5]
bump = [0.2, 0.4]

[flow]
t_max = 10.0
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tension_last_error()) }.to_string_lossy().into_owned()
}

fn new_flow(text: &str, resolution: u32) -> (TensionStatus, *mut TensionFlow) {
    let c = CString::new(text).unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { tension_flow_new(c.as_ptr(), resolution, &mut h) };
    (s, h)
}

#[test]
fn flow_handle_runs_to_stationarity() {
    let (s, h) = new_flow(GEODESIC, 0);
    assert_eq!(s, TensionStatus::Ok, "{}", last_error());
    let (mut nodes, mut dim) = (0usize, 0usize);
    unsafe {
        assert_eq!(tension_flow_shape(h, &mut nodes, &mut dim), TensionStatus::Ok);
        assert_eq!((nodes, dim), (17, 3));
        assert_eq!(tension_flow_step(h, 10), TensionStatus::Ok);
        let (mut t, mut k, mut r0) = (0.0, 0u64, 0.0);
        assert_eq!(tension_flow_status(h, &mut t, &mut k, &mut r0), TensionStatus::Ok);
        assert_eq!(k, 10);
        assert!(t > 0.0);

        let mut code = -1;
        assert_eq!(tension_flow_run(h, &mut code), TensionStatus::Ok);
        assert_eq!(code, 0);
        let mut r = f64::NAN;
        assert_eq!(tension_flow_status(h, ptr::null_mut(), ptr::null_mut(), &mut r), TensionStatus::Ok);
        assert!(r < r0 && r < 1e-8);

        let mut buf = vec![0.0; nodes * dim];
        assert_eq!(tension_flow_coords(h, buf.as_mut_ptr(), buf.len()), TensionStatus::Ok);
        // points on the hyperboloid -x0² + x1² + x2² = -1, upper sheet
        for p in buf.chunks(3) {
            assert!((p[1] * p[1] + p[2] * p[2] - p[0] * p[0] + 1.0).abs() < 1e-10);
            assert!(p[0] >= 1.0);
        }
        assert_eq!(tension_flow_coords(h, buf.as_mut_ptr(), buf.len() - 1), TensionStatus::InvalidArgument);
        assert!(last_error().contains("buffer length"));
        assert_eq!(tension_flow_step(h, 1), TensionStatus::InvalidArgument);
        tension_flow_free(h);
    }
}

#[test]
fn resolution_override_changes_the_mesh() {
    let (s, h) = new_flow(GEODESIC, 32);
    assert_eq!(s, TensionStatus::Ok, "{}", last_error());
    let (mut nodes, mut dim) = (0usize, 0usize);
    unsafe {
        tension_flow_shape(h, &mut nodes, &mut dim);
        tension_flow_free(h);
    }
    assert_eq!(nodes, 33);
}

#[test]
fn bad_config_reports_status_and_message() {
    let (s, h) = new_flow(&GEODESIC.replace("hyperboloid", "sphere"), 0);
    assert_eq!(s, TensionStatus::Config);
    assert!(h.is_null());
    assert!(last_error().contains("[target]"), "{}", last_error());

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { tension_flow_new(ptr::null(), 0, &mut h) }, TensionStatus::NullPointer);
    assert_eq!(unsafe { tension_flow_run(ptr::null_mut(), ptr::null_mut()) }, TensionStatus::NullPointer);
    unsafe { tension_flow_free(ptr::null_mut()) };
}

#[test]
fn oversized_steps_surface_as_blowup() {
    let text = GEODESIC.replace("t_max = 10.0", "t_max = 10.0\ndt = 0.05");
    let (s, h) = new_flow(&text, 0);
    assert_eq!(s, TensionStatus::Ok, "{}", last_error());
    unsafe {
        assert_eq!(tension_flow_step(h, 1000), TensionStatus::Blowup);
        assert!(last_error().contains("blowup"), "{}", last_error());
        tension_flow_free(h);
    }
}

#[test]
fn verify_returns_a_json_report() {
    let id = CString::new("eigenvalues").unwrap();
    let mut json = ptr::null_mut();
    let mut pass = false;
    let s = unsafe { tension_verify(id.as_ptr(), 64, 1, 1, &mut pass, &mut json) };
    assert_eq!(s, TensionStatus::Ok, "{}", last_error());
    assert!(pass);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { tension_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 3);

    let bad = CString::new("nope").unwrap();
    let s = unsafe { tension_verify(bad.as_ptr(), 64, 1, 1, ptr::null_mut(), &mut json) };
    assert_eq!(s, TensionStatus::Config);
    assert!(json.is_null());
    assert!(last_error().contains("nope"));
}

#[test]
fn dirichlet_eigenvalue_of_the_square() {
    let (l, n) = ([std::f64::consts::PI; 2], [65usize, 65]);
    let mut lambda = 0.0;
    assert_eq!(unsafe { tension_dirichlet_eigenvalue(l.as_ptr(), n.as_ptr(), 2, &mut lambda) }, TensionStatus::Ok);
    assert!((lambda - 2.0).abs() < 5e-3, "{lambda}");
    assert_eq!(
        unsafe { tension_dirichlet_eigenvalue(l.as_ptr(), n.as_ptr(), 3, &mut lambda) },
        TensionStatus::InvalidArgument
    );
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tension_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("tension.h")
}

fn have(tool: &str) -> bool {
    Command::new(tool).arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn header_declares_every_export_and_compiles() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "tension_last_error",
        "tension_version",
        "tension_string_free",
        "tension_flow_new",
        "tension_flow_free",
        "tension_flow_step",
        "tension_flow_run",
        "tension_flow_status",
        "tension_flow_shape",
        "tension_flow_coords",
        "tension_verify",
        "tension_dirichlet_eigenvalue",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct TensionFlow TensionFlow;"));
    for (tool, std) in [("cc", "-std=c99"), ("c++", "-std=c++11")] {
        if !have(tool) {
            eprintln!("{tool} not found; skipping compile check");
            continue;
        }
        let lang = if tool == "cc" { "c" } else { "c++" };
        let o = Command::new(tool)
            .args(["-fsyntax-only", "-Wall", "-Wextra", "-Werror", std, "-x", lang])
            .arg(header())
            .output()
            .unwrap();
        assert!(o.status.success(), "{tool}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "tension.h"

int main(void) {
    double lengths[1] = {3.141592653589793};
    size_t nodes[1] = {129};
    double lambda = 0.0;
    if (tension_dirichlet_eigenvalue(lengths, nodes, 1, &lambda) != TENSION_STATUS_OK) return 1;
    TensionFlow *flow = NULL;
    if (tension_flow_new("not toml [", 0, &flow) != TENSION_STATUS_CONFIG || flow != NULL) return 2;
    printf("%.6f %s\n", lambda, tension_last_error()[0] ? "error-set" : "error-empty");
    return 0;
}
"#;

/// Links a C program against the static library when both are available.
#[test]
fn c_program_links_against_the_static_library() {
    let exe = std::env::current_exe().unwrap();
    let Some(lib_dir) = exe.parent().and_then(Path::parent) else { return };
    let lib = lib_dir.join("libtension_ffi.a");
    if !lib.is_file() || !have("cc") {
        eprintln!("static library or cc not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let o = Command::new("cc")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(o.status.success(), "link: {}", String::from_utf8_lossy(&o.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let out = String::from_utf8_lossy(&run.stdout);
    let lambda: f64 = out.split_whitespace().next().unwrap().parse().unwrap();
    assert!((lambda - 1.0).abs() < 1e-3);
    assert!(out.contains("error-set"));
}
