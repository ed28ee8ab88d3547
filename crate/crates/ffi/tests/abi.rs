use std::ffi::{CStr, CString};
use std::ptr;

use dpgen_ffi::*;

const WAREHOUSE: &str = include_str!("../../core/fixtures/warehouse.json");

fn last_error() -> String {
    let p = dpgen_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(json: &str) -> *mut DpgenSpec {
    let text = CString::new(json).unwrap();
    let mut spec = ptr::null_mut();
    assert_eq!(unsafe { dpgen_spec_parse(text.as_ptr(), &mut spec) }, DpgenStatus::Ok);
    spec
}

#[test]
fn solves_the_warehouse_through_handles() {
    let spec = parse(WAREHOUSE);
    let mut count = 0usize;
    assert_eq!(unsafe { dpgen_spec_state_count(spec, &mut count) }, DpgenStatus::Ok);
    assert!(count > 0);
    for method in [DpgenMethod::Auto, DpgenMethod::PolicyIteration, DpgenMethod::ValueIteration, DpgenMethod::Enumerate] {
        let mut outcome = ptr::null_mut();
        assert_eq!(unsafe { dpgen_solve(spec, method, &mut outcome) }, DpgenStatus::Ok, "{method:?}");
        let mut value = 0.0;
        assert_eq!(unsafe { dpgen_outcome_value(outcome, &mut value) }, DpgenStatus::Ok);
        assert!((value - 2749.0 / 98.0).abs() < 1e-6, "{method:?}: {value}");
        let mut json = ptr::null_mut();
        assert_eq!(unsafe { dpgen_outcome_to_json(outcome, &mut json) }, DpgenStatus::Ok);
        let doc: serde_json::Value = serde_json::from_str(&unsafe { CStr::from_ptr(json) }.to_string_lossy()).unwrap();
        assert!(doc.get("value").is_some(), "{doc}");
        unsafe {
            dpgen_string_free(json);
            dpgen_outcome_free(outcome);
        }
    }
    unsafe { dpgen_spec_free(spec) };
}

#[test]
fn wrong_method_for_horizon_is_reported() {
    let spec = parse(WAREHOUSE);
    let mut outcome = ptr::null_mut();
    let status = unsafe { dpgen_solve(spec, DpgenMethod::BackwardInduction, &mut outcome) };
    assert_eq!(status, DpgenStatus::HorizonMismatch);
    assert!(outcome.is_null());
    assert!(!last_error().is_empty());
    unsafe { dpgen_spec_free(spec) };
}

#[test]
fn null_and_malformed_inputs() {
    let mut spec = ptr::null_mut();
    assert_eq!(unsafe { dpgen_spec_parse(ptr::null(), &mut spec) }, DpgenStatus::NullArgument);
    assert!(last_error().contains("json"));
    let junk = CString::new("{not json").unwrap();
    assert_eq!(unsafe { dpgen_spec_parse(junk.as_ptr(), &mut spec) }, DpgenStatus::InvalidSpec);
    assert!(spec.is_null());
    let mut value = 0.0;
    assert_eq!(unsafe { dpgen_outcome_value(ptr::null(), &mut value) }, DpgenStatus::NullArgument);
    unsafe {
        dpgen_spec_free(ptr::null_mut());
        dpgen_outcome_free(ptr::null_mut());
        dpgen_string_free(ptr::null_mut());
    }
}

#[test]
fn executes_spec_code() {
    let text = CString::new(WAREHOUSE).unwrap();
    let mut answer = 0.0;
    assert_eq!(unsafe { dpgen_execute_spec(text.as_ptr(), &mut answer) }, DpgenStatus::Ok);
    assert!((answer - 28.051020408163265).abs() < 1e-6);
}

#[test]
fn alignment_math() {
    let rewards = [1.0, 0.0, 1.0, 0.0];
    let mut adv = [0.0; 4];
    assert_eq!(unsafe { dpgen_grpo_advantages(rewards.as_ptr(), rewards.len(), adv.as_mut_ptr()) }, DpgenStatus::Ok);
    assert_eq!(adv, [1.0, -1.0, 1.0, -1.0]);
    assert_eq!(dpgen_grpo_surrogate(1.5, 1.0, 0.2), 1.2);
    assert!((dpgen_dpo_loss(0.0, 0.0, 0.0, 0.0, 0.1) - std::f64::consts::LN_2).abs() < 1e-12);
    let mut sim = 0.0;
    let a = CString::new("order stock").unwrap();
    assert_eq!(unsafe { dpgen_text_similarity(a.as_ptr(), a.as_ptr(), &mut sim) }, DpgenStatus::Ok);
    assert!((sim - 1.0).abs() < 1e-12);
}

#[test]
fn majority_vote_treats_nan_as_missing() {
    let answers = [3.0, f64::NAN, 3.0, 4.0, f64::NAN];
    let (mut found, mut value) = (false, 0.0);
    assert_eq!(unsafe { dpgen_majority_vote(answers.as_ptr(), answers.len(), &mut found, &mut value) }, DpgenStatus::Ok);
    assert!(found);
    assert_eq!(value, 3.0);
    let none = [f64::NAN, 1.0, 2.0, f64::NAN, 5.0];
    assert_eq!(unsafe { dpgen_majority_vote(none.as_ptr(), none.len(), &mut found, &mut value) }, DpgenStatus::Ok);
    assert!(!found);
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(dpgen_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dpgen.h")).unwrap();
    for item in ["DPGEN_H", "DPGEN_STATUS_OK = 0", "DPGEN_STATUS_PANIC = 10", "typedef struct DpgenSpec DpgenSpec;", "dpgen_solve(", "dpgen_majority_vote("] {
        assert!(header.contains(item), "header lacks {item}");
    }
}
