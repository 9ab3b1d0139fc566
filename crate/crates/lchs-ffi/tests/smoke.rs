//! Exercises the C entry points from Rust: status codes, handle lifecycle,
//! JSON payloads, error messages, and seed determinism.

use std::ffi::{CStr, CString};
use std::ptr;

use lchs_ffi::{
    lchs_estimate_json, lchs_last_error_message, lchs_plan_json, lchs_problem_dim,
    lchs_problem_free, lchs_problem_parse, lchs_solve_json, lchs_string_free, lchs_verify_scalar,
    lchs_version, LchsProblemHandle, LchsStatus,
};

const PROBLEM: &str = r#"{
    "dim": 2,
    "T": 1.0,
    "terms": [{
        "matrix": [[1.0, 1.0], [0.5, 0.0], [0.5, 0.0], [1.0, -1.0]],
        "time_profile": "const"
    }],
    "u0": [[1.0, 0.0], [0.0, 0.0]],
    "shift": "auto"
}"#;

const OBSERVABLE: &str = r#"{
    "dim": 2,
    "matrix": [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-1.0, 0.0]]
}"#;

fn parse(problem: &str) -> *mut LchsProblemHandle {
    let json = CString::new(problem).unwrap();
    let mut handle: *mut LchsProblemHandle = ptr::null_mut();
    let status = unsafe { lchs_problem_parse(json.as_ptr(), &mut handle) };
    assert_eq!(status, LchsStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    let ptr = lchs_last_error_message();
    assert!(!ptr.is_null(), "no error message recorded");
    unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string()
}

fn take_string(raw: *mut std::ffi::c_char) -> String {
    assert!(!raw.is_null());
    let text = unsafe { CStr::from_ptr(raw) }.to_str().unwrap().to_string();
    unsafe { lchs_string_free(raw) };
    text
}

#[test]
fn version_is_a_readable_semver() {
    let text = unsafe { CStr::from_ptr(lchs_version()) }.to_str().unwrap();
    assert_eq!(text, env!("CARGO_PKG_VERSION"));
}

#[test]
fn parse_solve_free_round_trip() {
    let handle = parse(PROBLEM);
    let mut dim = 0usize;
    assert_eq!(
        unsafe { lchs_problem_dim(handle, &mut dim) },
        LchsStatus::Ok
    );
    assert_eq!(dim, 2);

    let backend = CString::new("exact").unwrap();
    let mut raw: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { lchs_solve_json(handle, 1e-2, backend.as_ptr(), &mut raw) };
    assert_eq!(status, LchsStatus::Ok);
    let doc: serde_json::Value = serde_json::from_str(&take_string(raw)).unwrap();
    let p_succ = doc["p_succ"].as_f64().unwrap();
    assert!(p_succ > 0.0 && p_succ <= 1.0 + 1e-12, "p_succ {p_succ}");
    assert_eq!(doc["u_tilde"].as_array().unwrap().len(), 2);
    assert!(doc["tallies"]["propagator_calls"].as_u64().unwrap() > 0);

    unsafe { lchs_problem_free(handle) };
}

#[test]
fn estimate_is_deterministic_in_the_seed() {
    let handle = parse(PROBLEM);
    let observable = CString::new(OBSERVABLE).unwrap();
    let backend = CString::new("exact").unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let mut raw: *mut std::ffi::c_char = ptr::null_mut();
        let status = unsafe {
            lchs_estimate_json(
                handle,
                observable.as_ptr(),
                0.4,
                0.3,
                7,
                backend.as_ptr(),
                &mut raw,
            )
        };
        assert_eq!(status, LchsStatus::Ok);
        outputs.push(take_string(raw));
    }
    assert_eq!(outputs[0], outputs[1]);
    let doc: serde_json::Value = serde_json::from_str(&outputs[0]).unwrap();
    assert!(doc["half_width"].as_f64().unwrap() > 0.0);
    assert!(doc["value"].as_f64().unwrap().is_finite());
    unsafe { lchs_problem_free(handle) };
}

#[test]
fn plan_reports_positive_counts() {
    let handle = parse(PROBLEM);
    let mode = CString::new("td").unwrap();
    let mut raw: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { lchs_plan_json(handle, 1e-3, 2, mode.as_ptr(), &mut raw) };
    assert_eq!(status, LchsStatus::Ok);
    let doc: serde_json::Value = serde_json::from_str(&take_string(raw)).unwrap();
    assert!(doc["matrix_queries"].as_f64().unwrap() > 0.0);
    assert!(doc["kernel_intervals"].as_f64().unwrap() > 0.0);

    let bad_mode = CString::new("cap").unwrap();
    let mut raw: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { lchs_plan_json(handle, 1e-3, 2, bad_mode.as_ptr(), &mut raw) };
    assert_eq!(status, LchsStatus::InvalidArgument);
    assert!(raw.is_null());
    unsafe { lchs_problem_free(handle) };
}

#[test]
fn scalar_anchor_matches_the_closed_form() {
    let mut error = f64::NAN;
    let status = unsafe { lchs_verify_scalar(100.0, 20_000, &mut error) };
    assert_eq!(status, LchsStatus::Ok);
    assert!(error <= 1e-2, "anchor error {error:e}");
}

#[test]
fn malformed_input_reports_invalid_argument() {
    let json = CString::new("{\"not\": \"a problem\"}").unwrap();
    let mut handle: *mut LchsProblemHandle = ptr::null_mut();
    let status = unsafe { lchs_problem_parse(json.as_ptr(), &mut handle) };
    assert_eq!(status, LchsStatus::InvalidArgument);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let status = unsafe { lchs_problem_parse(ptr::null(), &mut handle) };
    assert_eq!(status, LchsStatus::InvalidArgument);
    assert!(last_error().contains("null"));
}

#[test]
fn decayed_problem_reports_the_budget_status() {
    let deep = r#"{
        "dim": 1,
        "T": 1.0,
        "terms": [{"matrix": [[1600.0, 0.0]], "time_profile": "const"}],
        "u0": [[1.0, 0.0]],
        "shift": "auto"
    }"#;
    let handle = parse(deep);
    let backend = CString::new("exact").unwrap();
    let mut raw: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { lchs_solve_json(handle, 1e-2, backend.as_ptr(), &mut raw) };
    assert_eq!(status, LchsStatus::NumericalBudget);
    assert!(raw.is_null());
    assert!(last_error().contains("decayed"));
    unsafe { lchs_problem_free(handle) };
}

#[test]
fn frees_accept_null() {
    unsafe {
        lchs_problem_free(ptr::null_mut());
        lchs_string_free(ptr::null_mut());
    }
}

#[test]
fn bad_backend_string_is_rejected() {
    let handle = parse(PROBLEM);
    let backend = CString::new("magic").unwrap();
    let mut raw: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { lchs_solve_json(handle, 1e-2, backend.as_ptr(), &mut raw) };
    assert_eq!(status, LchsStatus::InvalidArgument);
    assert!(last_error().contains("not recognized"));
    unsafe { lchs_problem_free(handle) };
}

#[test]
fn observable_dimension_mismatch_is_rejected() {
    let handle = parse(PROBLEM);
    let observable = CString::new(r#"{"dim": 3, "matrix": [
        [1.0,0.0],[0.0,0.0],[0.0,0.0],
        [0.0,0.0],[1.0,0.0],[0.0,0.0],
        [0.0,0.0],[0.0,0.0],[1.0,0.0]]}"#)
    .unwrap();
    let backend = CString::new("exact").unwrap();
    let mut raw: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe {
        lchs_estimate_json(handle, observable.as_ptr(), 0.4, 0.3, 7, backend.as_ptr(), &mut raw)
    };
    assert_eq!(status, LchsStatus::InvalidArgument);
    assert!(last_error().contains("dimension"));
    unsafe { lchs_problem_free(handle) };
}

#[test]
fn generated_header_declares_the_full_surface() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/lchs.h"
    ))
    .unwrap();
    for symbol in [
        "LCHS_STATUS_OK = 0",
        "LCHS_STATUS_INVALID_ARGUMENT = 2",
        "LCHS_STATUS_NUMERICAL_BUDGET = 3",
        "LCHS_STATUS_INTERNAL_ERROR = 4",
        "typedef struct LchsProblemHandle LchsProblemHandle",
        "lchs_problem_parse",
        "lchs_problem_dim",
        "lchs_problem_free",
        "lchs_solve_json",
        "lchs_estimate_json",
        "lchs_plan_json",
        "lchs_verify_scalar",
        "lchs_last_error_message",
        "lchs_string_free",
        "lchs_version",
    ] {
        assert!(header.contains(symbol), "header lost {symbol:?}");
    }
}
