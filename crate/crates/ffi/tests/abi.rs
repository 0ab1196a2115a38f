//! Exercises the C surface from Rust: handle lifecycle, out-parameter
//! contracts, status codes, thread-local error messages and the scenario
//! entry points, plus a shape check on the generated header.

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use qprobe_ffi::{
    qp_bundled_list, qp_check_duan, qp_extract_n, qp_extract_second_moments, qp_extract_x,
    qp_extract_y, qp_field_coherent, qp_field_fock, qp_field_free, qp_field_leakage,
    qp_field_modes, qp_field_thermal, qp_field_two_mode_squeezed_vacuum, qp_last_error_message,
    qp_scenario_run, qp_scenario_source, qp_scenario_validate, qp_string_free, qp_version,
    QpField, QpStatus,
};

fn last_error() -> String {
    let p = qp_last_error_message();
    assert!(!p.is_null(), "a failure should have recorded a message");
    unsafe { take_string(p) }
}

unsafe fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().expect("library strings are UTF-8").to_owned();
    qp_string_free(p);
    s
}

fn build(ctor: impl FnOnce(*mut *mut QpField) -> QpStatus) -> *mut QpField {
    let mut out: *mut QpField = ptr::null_mut();
    let status = ctor(&mut out);
    assert_eq!(status, QpStatus::Ok, "constructor failed: {}", last_error());
    assert!(!out.is_null());
    out
}

#[test]
fn version_is_a_static_utf8_string() {
    let p = qp_version();
    assert!(!p.is_null());
    let v = unsafe { CStr::from_ptr(p) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn coherent_first_moments_match_the_amplitude() {
    let field = build(|out| unsafe { qp_field_coherent(0.8, -0.3, 32, 1e-8, out) });
    unsafe {
        assert_eq!(qp_field_modes(field), 1);
        let leak = qp_field_leakage(field);
        assert!(leak >= 0.0 && leak < 1e-8, "leakage {leak:.3e}");

        let (mut value, mut error) = (f64::NAN, f64::NAN);
        assert_eq!(qp_extract_x(field, 0.0, &mut value, &mut error), QpStatus::Ok);
        assert!((value - 0.8).abs() < 1e-9, "X(0) = {value}");
        assert!(error.is_finite() && error >= 0.0);

        assert_eq!(qp_extract_y(field, 0.0, &mut value, &mut error), QpStatus::Ok);
        assert!((value + 0.3).abs() < 1e-9, "Y(0) = {value}");

        qp_field_free(field);
    }
}

#[test]
fn vacuum_second_moments_sit_at_one_quarter() {
    let field = build(|out| unsafe { qp_field_fock(0, 16, 1e-8, out) });
    unsafe {
        assert_eq!(qp_field_leakage(field), 0.0);
        let (mut x2, mut y2, mut error) = (f64::NAN, f64::NAN, f64::NAN);
        assert_eq!(
            qp_extract_second_moments(field, 0.4, &mut x2, &mut y2, &mut error),
            QpStatus::Ok
        );
        assert!((x2 - 0.25).abs() < 1e-8, "X^2 = {x2}");
        assert!((y2 - 0.25).abs() < 1e-8, "Y^2 = {y2}");
        assert!(error.is_finite() && error >= 0.0);
        qp_field_free(field);
    }
}

#[test]
fn thermal_photon_number_matches_the_mean_occupation() {
    let field = build(|out| unsafe { qp_field_thermal(0.85, 60, 1e-6, out) });
    unsafe {
        let (mut value, mut error) = (f64::NAN, f64::NAN);
        assert_eq!(qp_extract_n(field, &mut value, &mut error), QpStatus::Ok);
        assert!((value - 0.85).abs() < 1e-8, "n = {value}");
        qp_field_free(field);
    }
}

#[test]
fn two_mode_squeezed_vacuum_violates_the_separability_bound() {
    let field = build(|out| unsafe { qp_field_two_mode_squeezed_vacuum(0.5, 14, 1e-8, out) });
    unsafe {
        assert_eq!(qp_field_modes(field), 2);
        let (mut sum, mut bound, mut violates) = (f64::NAN, f64::NAN, false);
        assert_eq!(
            qp_check_duan(field, 1.0, -1.0, 1.0, 1e-8, &mut sum, &mut bound, &mut violates),
            QpStatus::Ok
        );
        assert_eq!(bound, 2.0);
        let expected = 2.0 * (-1.0f64).exp();
        assert!((sum - expected).abs() < 1e-6, "sum = {sum}, expected {expected}");
        assert!(violates);
        qp_field_free(field);
    }
}

#[test]
fn statuses_and_messages_separate_input_from_numerical_failures() {
    unsafe {
        let mut out: *mut QpField = ptr::null_mut();

        assert_eq!(qp_field_thermal(-1.0, 16, 1e-8, &mut out), QpStatus::InvalidInput);
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(qp_field_coherent(2.0, 0.0, 8, 1e-8, &mut out), QpStatus::NumericalBreakdown);
        assert!(out.is_null());
        assert!(last_error().contains("truncation leak"), "{}", last_error());

        let field = build(|out| qp_field_two_mode_squeezed_vacuum(0.3, 8, 1e-6, out));
        let (mut value, mut error) = (f64::NAN, f64::NAN);
        assert_eq!(qp_extract_x(field, 0.0, &mut value, &mut error), QpStatus::InvalidInput);
        assert!(last_error().contains("single mode"), "{}", last_error());
        qp_field_free(field);
    }
}

#[test]
fn null_arguments_are_rejected_not_dereferenced() {
    unsafe {
        let mut value = f64::NAN;
        assert_eq!(
            qp_extract_x(ptr::null(), 0.0, &mut value, ptr::null_mut()),
            QpStatus::NullPointer
        );
        assert_eq!(qp_field_fock(0, 16, 1e-8, ptr::null_mut()), QpStatus::NullPointer);
        assert_eq!(qp_field_modes(ptr::null()), 0);
        assert!(qp_field_leakage(ptr::null()).is_nan());
        qp_field_free(ptr::null_mut());
        qp_string_free(ptr::null_mut());
    }
}

#[test]
fn scenario_calls_round_trip_through_the_c_surface() {
    unsafe {
        let mut listing: *mut c_char = ptr::null_mut();
        assert_eq!(qp_bundled_list(&mut listing), QpStatus::Ok);
        let listing = take_string(listing);
        assert!(listing.contains("vacuum-smoke"), "{listing}");

        let name = CString::new("vacuum-smoke").unwrap();
        let mut toml: *mut c_char = ptr::null_mut();
        assert_eq!(qp_scenario_source(name.as_ptr(), &mut toml), QpStatus::Ok);
        let toml = take_string(toml);
        assert!(toml.contains("schema"));
        let text = CString::new(toml).unwrap();

        let mut summary: *mut c_char = ptr::null_mut();
        assert_eq!(
            qp_scenario_validate(text.as_ptr(), ptr::null(), &mut summary),
            QpStatus::Ok
        );
        let summary = take_string(summary);
        assert!(summary.contains("observable(s)"), "{summary}");

        let dir = tempfile::tempdir().unwrap();
        let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(
            qp_scenario_run(text.as_ptr(), ptr::null(), out_dir.as_ptr(), &mut json),
            QpStatus::Ok
        );
        let json = take_string(json);
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(parsed["generated_at"].is_string());
        assert_eq!(parsed["report"]["name"], "vacuum-smoke");
        assert_eq!(parsed["report"]["results"].as_array().unwrap().len(), 3);
        assert!(dir.path().join("vacuum-smoke/results.json").exists());
        assert!(dir.path().join("vacuum-smoke/runs").read_dir().unwrap().count() > 0);

        let mut again: *mut c_char = ptr::null_mut();
        assert_eq!(
            qp_scenario_run(text.as_ptr(), ptr::null(), ptr::null(), &mut again),
            QpStatus::Ok
        );
        let again = take_string(again);
        let strip = |s: &str| {
            s.lines().filter(|l| !l.contains("generated_at")).collect::<Vec<_>>().join("\n")
        };
        assert_eq!(strip(&json), strip(&again));
    }
}

#[test]
fn scenario_errors_carry_the_source_label() {
    unsafe {
        let text = CString::new("schema = 1\nname = \"x\"\nnot_a_key = true\n").unwrap();
        let label = CString::new("widget.toml").unwrap();
        assert_eq!(
            qp_scenario_validate(text.as_ptr(), label.as_ptr(), ptr::null_mut()),
            QpStatus::InvalidInput
        );
        assert!(last_error().contains("widget.toml"), "{}", last_error());

        let bytes = CString::new([0x73, 0xff, 0xfe].as_slice()).unwrap();
        assert_eq!(
            qp_scenario_validate(bytes.as_ptr(), ptr::null(), ptr::null_mut()),
            QpStatus::InvalidUtf8
        );
        assert!(last_error().contains("UTF-8"), "{}", last_error());
    }
}

#[test]
fn generated_header_declares_the_full_surface() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qprobe.h");
    let text = std::fs::read_to_string(&header).expect("build script writes include/qprobe.h");
    assert!(text.contains("typedef struct QpField QpField"));
    assert!(text.contains("QP_STATUS_NUMERICAL_BREAKDOWN = 3"));
    for symbol in [
        "qp_version",
        "qp_last_error_message",
        "qp_string_free",
        "qp_field_fock",
        "qp_field_coherent",
        "qp_field_thermal",
        "qp_field_squeezed_vacuum",
        "qp_field_cat",
        "qp_field_two_mode_squeezed_vacuum",
        "qp_field_free",
        "qp_field_modes",
        "qp_field_leakage",
        "qp_extract_x",
        "qp_extract_y",
        "qp_extract_n",
        "qp_extract_second_moments",
        "qp_check_duan",
        "qp_scenario_run",
        "qp_scenario_validate",
        "qp_scenario_source",
        "qp_bundled_list",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}
