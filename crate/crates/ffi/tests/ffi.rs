use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ctrlinv_ffi::*;

const RUNNING: &str = r#"{"n": 3, "k": 2, "box": [[-1, 1], [-1, 1], [-1, 5]],
    "drift": ["0", "0", "x1*x2 + x3"], "controls": [["0", "0", "1 + x1^2"]]}"#;

const DRIFT_ONLY: &str = r#"{"n": 2, "k": 1, "box": [[-1, 1], [-1, 1]],
    "drift": ["0", "x1"], "controls": []}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ctrlinv_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn load(json: &str) -> *mut CtrlinvSystem {
    let text = CString::new(json).unwrap();
    let mut sys = ptr::null_mut();
    let st = unsafe { ctrlinv_system_from_json(text.as_ptr(), &mut sys) };
    assert_eq!(st, CtrlinvStatus::Ok, "{}", last_error());
    sys
}

#[test]
fn check_synthesize_and_evaluate() {
    let sys = load(RUNNING);
    let (mut n, mut k, mut m) = (0, 0, 0);
    assert_eq!(unsafe { ctrlinv_system_dims(sys, &mut n, &mut k, &mut m) }, CtrlinvStatus::Ok);
    assert_eq!((n, k, m), (3, 2, 1));

    let mut verdict = CtrlinvVerdict::NotInvariant;
    assert_eq!(unsafe { ctrlinv_check(sys, 5, 0.0, &mut verdict) }, CtrlinvStatus::Ok);
    assert_eq!(verdict, CtrlinvVerdict::Invariant);

    let mut fb = ptr::null_mut();
    assert_eq!(unsafe { ctrlinv_synthesize(sys, 5, &mut fb) }, CtrlinvStatus::Ok);
    let q = [0.5, -0.5, 2.0];
    let (mut a, mut b) = ([0.0], [0.0]);
    let st = unsafe { ctrlinv_feedback_eval(fb, q.as_ptr(), 3, a.as_mut_ptr(), b.as_mut_ptr()) };
    assert_eq!(st, CtrlinvStatus::Ok);
    assert!((a[0] - 0.25 / 1.25).abs() < 1e-12);
    assert!((b[0] - 0.8).abs() < 1e-12);

    let st = unsafe { ctrlinv_feedback_eval(fb, q.as_ptr(), 2, a.as_mut_ptr(), b.as_mut_ptr()) };
    assert_eq!(st, CtrlinvStatus::InvalidInput);
    assert!(last_error().contains("coordinates"));

    unsafe {
        ctrlinv_feedback_free(fb);
        ctrlinv_system_free(sys);
    }
}

#[test]
fn errors_are_reported_by_status_and_message() {
    let bad = CString::new(r#"{"n": 2, "k": 1, "box": [[-1, 1], [-1, 1]], "drift": ["0", "x3"]}"#).unwrap();
    let mut sys = ptr::null_mut();
    let st = unsafe { ctrlinv_system_from_json(bad.as_ptr(), &mut sys) };
    assert_eq!(st, CtrlinvStatus::InvalidInput);
    assert!(sys.is_null());
    assert!(last_error().contains("drift[1]"), "{}", last_error());

    assert_eq!(
        unsafe { ctrlinv_system_from_json(ptr::null(), &mut sys) },
        CtrlinvStatus::NullPointer
    );
    let mut verdict = CtrlinvVerdict::Invariant;
    assert_eq!(
        unsafe { ctrlinv_check(ptr::null(), 0, 0.0, &mut verdict) },
        CtrlinvStatus::NullPointer
    );

    let sys = load(DRIFT_ONLY);
    let mut fb = ptr::null_mut();
    assert_eq!(unsafe { ctrlinv_synthesize(sys, 5, &mut fb) }, CtrlinvStatus::NotInvariant);
    assert!(fb.is_null());
    unsafe {
        ctrlinv_system_free(sys);
        ctrlinv_system_free(ptr::null_mut());
        ctrlinv_feedback_free(ptr::null_mut());
        ctrlinv_string_free(ptr::null_mut());
    }
}

#[test]
fn run_json_returns_report() {
    let text = CString::new(RUNNING).unwrap();
    let mut code = -1;
    let s = unsafe { ctrlinv_run_json(text.as_ptr(), false, &mut code) };
    assert!(!s.is_null());
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(s) }.to_str().unwrap()).unwrap();
    assert_eq!(report["verdict"], "invariant");
    assert!(report["verification"]["max_residual"].as_f64().unwrap() <= 1e-6);
    unsafe { ctrlinv_string_free(s) };

    let text = CString::new(DRIFT_ONLY).unwrap();
    let s = unsafe { ctrlinv_run_json(text.as_ptr(), false, &mut code) };
    assert_eq!(code, 1);
    unsafe { ctrlinv_string_free(s) };

    let text = CString::new("[").unwrap();
    let s = unsafe { ctrlinv_run_json(text.as_ptr(), false, &mut code) };
    assert!(s.is_null());
    assert_eq!(code, 3);
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/ctrlinv.h"),
    )
    .unwrap();
    for name in [
        "ctrlinv_system_from_json",
        "ctrlinv_system_free",
        "ctrlinv_system_dims",
        "ctrlinv_check",
        "ctrlinv_synthesize",
        "ctrlinv_feedback_free",
        "ctrlinv_feedback_eval",
        "ctrlinv_run_json",
        "ctrlinv_string_free",
        "ctrlinv_last_error_message",
        "typedef struct CtrlinvSystem CtrlinvSystem",
        "CTRLINV_STATUS_NOT_INVARIANT",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

/// Compile and run a C program against the static library when a C
/// compiler and the archive are available.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = manifest.join("../../target").join(profile).join("libctrlinv_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "ctrlinv.h"
int main(void) {
    const char *j = "{\"n\":3,\"k\":2,\"box\":[[-1,1],[-1,1],[-1,5]],"
        "\"drift\":[\"0\",\"0\",\"x1*x2 + x3\"],\"controls\":[[\"0\",\"0\",\"1 + x1^2\"]]}";
    CtrlinvSystem *s = NULL;
    CtrlinvFeedback *f = NULL;
    CtrlinvVerdict v;
    double q[3] = {0.5, 0.5, 1.0}, a[1], b[1];
    if (ctrlinv_system_from_json(j, &s) != CTRLINV_STATUS_OK) return 1;
    if (ctrlinv_check(s, 5, 0.0, &v) != CTRLINV_STATUS_OK || v != CTRLINV_VERDICT_INVARIANT) return 2;
    if (ctrlinv_synthesize(s, 5, &f) != CTRLINV_STATUS_OK) return 3;
    if (ctrlinv_feedback_eval(f, q, 3, a, b) != CTRLINV_STATUS_OK) return 4;
    printf("%.15f %.15f\n", a[0], b[0]);
    ctrlinv_feedback_free(f);
    ctrlinv_system_free(s);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    let v: Vec<f64> = text.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!((v[0] + 0.2).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12, "{text}");
}
