//! The C interface exercised from Rust through its exported symbols.

use std::ffi::{CStr, CString};
use std::ptr;

use rsl_ffi::*;

const SINGLE: &str = "[model]\nfamily = \"gbm_interval\"\nT = 1.0\nx0 = [1.0]\n\n[intervals]\nb = [0.1, 0.1]\na = [0.04, 0.04]\n";
const VOL: &str = "[model]\nfamily = \"gbm_interval\"\nT = 1.0\nx0 = [1.0]\n\n[intervals]\nb = [0.0, 0.0]\na = [0.04, 0.09]\n";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = rsl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Spec(*mut RslSpec);

impl Spec {
    fn load(toml: &str) -> Spec {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { rsl_spec_from_toml(c(toml).as_ptr(), &mut h) }, RslStatus::Ok);
        assert!(!h.is_null());
        Spec(h)
    }
}

impl Drop for Spec {
    fn drop(&mut self) {
        unsafe { rsl_spec_free(self.0) }
    }
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { rsl_string_free(p) };
    s
}

#[test]
fn version_names_the_report_schema() {
    let v = unsafe { CStr::from_ptr(rsl_version()) }.to_str().unwrap();
    assert!(v.starts_with("0.1.0") && v.contains("rsl/1"));
}

#[test]
fn bad_arguments_set_status_and_message() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { rsl_spec_from_toml(ptr::null(), &mut h) }, RslStatus::NullArgument);
    assert!(last_error().contains("toml"));

    let bad_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { rsl_spec_from_toml(bad_utf8.as_ptr().cast(), &mut h) }, RslStatus::InvalidUtf8);

    let inverted = SINGLE.replace("b = [0.1, 0.1]", "b = [0.2, 0.1]");
    assert_eq!(unsafe { rsl_spec_from_toml(c(&inverted).as_ptr(), &mut h) }, RslStatus::Config);
    assert!(h.is_null());

    // A success clears the message.
    let _s = Spec::load(SINGLE);
    assert!(rsl_last_error().is_null());

    unsafe {
        rsl_spec_free(ptr::null_mut());
        rsl_string_free(ptr::null_mut());
    }
}

#[test]
fn coefficients_are_the_selected_characteristics() {
    let s = Spec::load(VOL);
    let (mut d, mut m) = (0, 0);
    assert_eq!(unsafe { rsl_spec_dims(s.0, &mut d, &mut m) }, RslStatus::Ok);
    assert_eq!((d, m), (1, 2));

    let (f, x) = ([0.0, 0.06], [1.5]);
    let (mut b, mut a) = ([f64::NAN], [f64::NAN]);
    let st = unsafe { rsl_spec_coefficients(s.0, f.as_ptr(), 2, 0.3, x.as_ptr(), 1, b.as_mut_ptr(), a.as_mut_ptr()) };
    assert_eq!(st, RslStatus::Ok, "{}", last_error());
    assert_eq!(b[0], 0.0);
    assert_eq!(a[0], 0.06);

    let outside = [0.0, 0.5];
    let st = unsafe { rsl_spec_coefficients(s.0, outside.as_ptr(), 2, 0.0, x.as_ptr(), 1, b.as_mut_ptr(), a.as_mut_ptr()) };
    assert_eq!(st, RslStatus::ParamOutOfBox);

    let st = unsafe { rsl_spec_coefficients(s.0, f.as_ptr(), 1, 0.0, x.as_ptr(), 1, b.as_mut_ptr(), a.as_mut_ptr()) };
    assert_eq!(st, RslStatus::Domain);
}

#[test]
fn constant_claim_costs_its_value_without_hedging() {
    let s = Spec::load(VOL);
    let (mut price, mut hedge) = (f64::NAN, f64::NAN);
    let st = unsafe { rsl_superhedge(s.0, c("0.5").as_ptr(), 16, &mut price, &mut hedge) };
    assert_eq!(st, RslStatus::Ok, "{}", last_error());
    assert!((price - 0.5).abs() < 1e-12, "{price}");
    assert!(hedge.abs() < 1e-12, "{hedge}");

    let st = unsafe { rsl_superhedge(s.0, c("max(X - 1, 0)").as_ptr(), 16, &mut price, &mut hedge) };
    assert_eq!(st, RslStatus::Ok);
    assert!(price > 0.0 && price < 1.0 && hedge > 0.0 && hedge < 1.0);

    let st = unsafe { rsl_superhedge(s.0, c("max(X - ").as_ptr(), 16, &mut price, &mut hedge) };
    assert_eq!(st, RslStatus::Config);
}

#[test]
fn log_values_match_the_merton_closed_form() {
    // One model with b = 0.1, a = 0.04: u(x) = log x + b²T/(2a), v(y) = -log y - 1 + b²T/(2a).
    let growth = 0.1f64 * 0.1 / (2.0 * 0.04);
    let s = Spec::load(SINGLE);
    let (mut u, mut v) = (f64::NAN, f64::NAN);
    let st = unsafe { rsl_primal_value(s.0, c("log").as_ptr(), 2.0, 32, 7, &mut u) };
    assert_eq!(st, RslStatus::Ok, "{}", last_error());
    assert!((u - (2f64.ln() + growth)).abs() < 2e-3, "{u}");
    let st = unsafe { rsl_dual_value(s.0, c("log").as_ptr(), 0.5, 32, 7, &mut v) };
    assert_eq!(st, RslStatus::Ok, "{}", last_error());
    assert!((v - (-(0.5f64.ln()) - 1.0 + growth)).abs() < 2e-3, "{v}");

    let st = unsafe { rsl_primal_value(s.0, c("power:2").as_ptr(), 1.0, 32, 7, &mut u) };
    assert_eq!(st, RslStatus::Config);
}

#[test]
fn certificates_come_back_as_json() {
    let s = Spec::load(SINGLE);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rsl_certify(s.0, 256, 1, &mut out) }, RslStatus::Ok, "{}", last_error());
    let certs: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    let bound = certs["mpr"]["global_bound"].as_f64().or_else(|| certs["mpr_bounded"]["bound"].as_f64());
    assert!(bound.is_some(), "{certs}");
}

#[test]
fn experiments_return_the_report() {
    let model = VOL.replace("[model]", "[model.model]").replace("[intervals]", "[model.intervals]");
    let cfg = format!("seed = 3\n\n{model}\n[superhedge]\npayoff = \"max(X - 1, 0)\"\nverify_paths = 200\nexhaustive_steps = 4\n\n[superhedge.lattice]\nn_steps = 8\n");
    let (mut out, mut passed) = (ptr::null_mut(), -1);
    let st = unsafe { rsl_run_experiment(c(&cfg).as_ptr(), &mut out, &mut passed) };
    assert_eq!(st, RslStatus::Ok, "{}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(report["schema"], "rsl/1");
    assert_eq!(report["command"], "superhedge");
    assert_eq!(report["pass"].as_bool(), Some(passed == 1));

    let st = unsafe { rsl_run_experiment(c("seed = 1\n").as_ptr(), &mut out, &mut passed) };
    assert_eq!(st, RslStatus::Config);
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rsl.h")).unwrap();
    for name in [
        "rsl_last_error",
        "rsl_version",
        "rsl_string_free",
        "rsl_spec_from_toml",
        "rsl_spec_free",
        "rsl_spec_dims",
        "rsl_spec_coefficients",
        "rsl_certify",
        "rsl_superhedge",
        "rsl_primal_value",
        "rsl_dual_value",
        "rsl_run_experiment",
        "typedef struct RslSpec RslSpec",
        "RSL_STATUS_PANIC = 99",
    ] {
        assert!(header.contains(name), "{name} missing from rsl.h");
    }
}
