use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use spk_ffi::*;

const EX1: &str = include_str!("../../core/corpus/ex1_near.json");
const QP10: &str = include_str!("../../core/corpus/qp10.json");

fn load(json: &str) -> *mut SpkProblem {
    let text = CString::new(json).unwrap();
    let mut p = ptr::null_mut();
    let st = unsafe { spk_problem_from_json(text.as_ptr(), &mut p) };
    assert_eq!(st, SpkStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(spk_last_error_message()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn take_string(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { spk_string_free(s) };
    out
}

#[test]
fn problem_round_trip_and_dims() {
    let p = load(EX1);
    let (mut n, mut m, mut q, mut s) = (0, 0, 0, 0);
    assert_eq!(
        unsafe { spk_problem_dims(p, &mut n, &mut m, &mut q, &mut s) },
        SpkStatus::Ok
    );
    assert_eq!((n, m, q, s), (4, 3, 0, 3));
    assert_eq!(
        unsafe { spk_problem_dims(p, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), &mut s) },
        SpkStatus::Ok
    );
    unsafe { spk_problem_free(p) };
    unsafe { spk_problem_free(ptr::null_mut()) };
}

#[test]
fn malformed_json_reports_parse_error() {
    let text = CString::new("{\"Q\": [[1").unwrap();
    let mut p = ptr::null_mut();
    let st = unsafe { spk_problem_from_json(text.as_ptr(), &mut p) };
    assert_eq!(st, SpkStatus::Parse);
    assert!(p.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { spk_problem_from_json(ptr::null(), &mut out) },
        SpkStatus::NullPointer
    );
    assert!(last_error().contains("null"));
    let mut v = 0.0;
    let x = [0.0; 4];
    assert_eq!(
        unsafe { spk_penalty_value(ptr::null(), 1.0, x.as_ptr(), 4, &mut v) },
        SpkStatus::NullPointer
    );
    assert_eq!(
        unsafe { spk_project_sparse(ptr::null(), 3, 1, ptr::null_mut()) },
        SpkStatus::NullPointer
    );
}

#[test]
fn projection_keeps_largest_magnitudes() {
    let x = [0.5, -3.0, 2.0, 0.1];
    let mut out = [9.0; 4];
    assert_eq!(
        unsafe { spk_project_sparse(x.as_ptr(), 4, 2, out.as_mut_ptr()) },
        SpkStatus::Ok
    );
    assert_eq!(out, [0.0, -3.0, 2.0, 0.0]);
}

#[test]
fn penalty_value_and_subgradient() {
    // ex1_near: f = ‖x − (1,1,0,0)‖², g = Ax − b with rows (1,0,1,1), (0,0,1,1), (0,1,0,0).
    let p = load(EX1);
    let x = [2.0, 0.0, 0.0, 0.0];
    let mut v = 0.0;
    assert_eq!(
        unsafe { spk_penalty_value(p, 1.0, x.as_ptr(), 4, &mut v) },
        SpkStatus::Ok
    );
    // f = 1 + 1 = 2, g⁺ = (1, 0, 0)
    assert_eq!(v, 3.0);
    let mut d = [0.0; 4];
    assert_eq!(
        unsafe { spk_penalty_subgradient(p, 1.0, x.as_ptr(), 4, d.as_mut_ptr()) },
        SpkStatus::Ok
    );
    // ∇f = (2, −2, 0, 0) plus the first constraint row.
    assert_eq!(d, [3.0, -2.0, 1.0, 1.0]);
    assert_eq!(
        unsafe { spk_penalty_value(p, 1.0, x.as_ptr(), 3, &mut v) },
        SpkStatus::DimensionMismatch
    );
    assert_eq!(
        unsafe { spk_penalty_value(p, -1.0, x.as_ptr(), 4, &mut v) },
        SpkStatus::Config
    );
    unsafe { spk_problem_free(p) };
}

#[test]
fn psm_run_and_accessors() {
    let p = load(QP10);
    let opts = SpkPsmOptions {
        rule: SpkRule::Diminishing,
        p0: 1.0,
        p1: 1.0,
        max_iters: 500,
        stop_tol: -1.0,
        record_every: 1,
        x0: ptr::null(),
    };
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { spk_run_psm(p, 10.0, &opts, &mut r) }, SpkStatus::Ok);
    let (mut iters, mut term, mut len, mut fval) = (0, SpkTermination::Converged, 0, 0.0);
    assert_eq!(
        unsafe { spk_psm_result_info(r, &mut iters, &mut term, &mut len, &mut fval) },
        SpkStatus::Ok
    );
    assert_eq!(iters, 500);
    assert_eq!(term, SpkTermination::MaxIters);
    assert_eq!(len, 501);
    let mut x = [0.0; 10];
    assert_eq!(unsafe { spk_psm_result_x(r, x.as_mut_ptr(), 10) }, SpkStatus::Ok);
    assert!(x.iter().filter(|v| **v != 0.0).count() <= 3);
    let mut v = 0.0;
    unsafe { spk_penalty_value(p, 10.0, x.as_ptr(), 10, &mut v) };
    assert_eq!(v, fval);
    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { spk_psm_result_trace_csv(r, &mut csv) }, SpkStatus::Ok);
    let text = take_string(csv);
    assert!(text.starts_with("k,F,best_F"));
    assert_eq!(text.lines().count(), 502);
    unsafe { spk_psm_result_free(r) };

    let bad = SpkPsmOptions { p0: -1.0, ..opts };
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { spk_run_psm(p, 10.0, &bad, &mut r) }, SpkStatus::Config);
    assert!(r.is_null());
    unsafe { spk_problem_free(p) };
}

#[test]
fn oracle_and_cq_reports() {
    let p = load(EX1);
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { spk_oracle_solve(p, 10.0, SpkMode::Constrained, &mut s) },
        SpkStatus::Ok
    );
    let summary: serde_json::Value = serde_json::from_str(&take_string(s)).unwrap();
    let xs: Vec<f64> = summary["x_star"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(xs.iter().zip([1.0, 1.0, 0.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-9));
    let x = [1.0, 1.0, 0.0, 0.0];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { spk_check_cq_json(p, x.as_ptr(), 4, &mut s) }, SpkStatus::Ok);
    let rep: serde_json::Value = serde_json::from_str(&take_string(s)).unwrap();
    assert_eq!(rep["cc_mfcq"], true);
    assert_eq!(rep["restricted_mfcq"], false);
    let infeasible = [3.0, 0.0, 0.0, 0.0];
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { spk_check_cq_json(p, infeasible.as_ptr(), 4, &mut s) },
        SpkStatus::Precondition
    );
    unsafe { spk_problem_free(p) };
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(spk_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spk.h")).unwrap();
    for name in [
        "spk_problem_from_json",
        "spk_problem_free",
        "spk_problem_dims",
        "spk_project_sparse",
        "spk_penalty_value",
        "spk_penalty_subgradient",
        "spk_run_psm",
        "spk_psm_result_free",
        "spk_psm_result_x",
        "spk_psm_result_info",
        "spk_psm_result_trace_csv",
        "spk_oracle_solve",
        "spk_check_cq_json",
        "spk_string_free",
        "spk_last_error_message",
        "spk_version",
        "typedef struct SpkProblem SpkProblem",
        "SPK_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from spk.h");
    }
}

fn static_library() -> PathBuf {
    // `cargo test` only builds the rlib, so build the static archive into
    // the same target directory: target/<profile>/deps/<test> → target/.
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let status = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "spk-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .status()
        .expect("cargo available");
    assert!(status.success());
    target.join("debug").join("libspk_ffi.a")
}

#[test]
fn c_program_links_against_the_header() {
    let lib = static_library();
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "spk.h"
int main(void) {
    double x[4] = {0.5, -3.0, 2.0, 0.1};
    double y[4];
    if (spk_project_sparse(x, 4, 2, y) != SPK_STATUS_OK) return 1;
    if (y[0] != 0.0 || y[1] != -3.0 || y[2] != 2.0 || y[3] != 0.0) return 2;
    SpkProblem *p = NULL;
    if (spk_problem_from_json("{", &p) != SPK_STATUS_PARSE) return 3;
    if (spk_last_error_message()[0] == '\0') return 4;
    printf("%s\n", spk_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), env!("CARGO_PKG_VERSION"));
}
