use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use lmtp_ffi::*;

fn last_error() -> String {
    let p = lmtp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { lmtp_string_free(p) };
    s
}

fn policy(spec: &str) -> *mut LmtpPolicy {
    let spec = CString::new(spec).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_policy_parse(spec.as_ptr(), &mut out) },
        LmtpStatus::Ok
    );
    out
}

const LEAN: &str = r#"{"folds": 5, "regression": {"members": [{"kind": "ols"}]},
 "classification": {"members": [{"kind": "logistic"}]}}"#;

#[test]
fn estimate_and_infer_through_handles() {
    let mut data = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_dataset_simulate(1.0, 600, 7, &mut data) },
        LmtpStatus::Ok
    );
    let (mut n, mut tau) = (0usize, 0usize);
    assert_eq!(
        unsafe { lmtp_dataset_shape(data, &mut n, &mut tau) },
        LmtpStatus::Ok
    );
    assert_eq!((n, tau), (600, 4));

    let a = policy("identity");
    let b = policy("shift:-1");
    let cfg = CString::new(LEAN).unwrap();
    let mut est = ptr::null_mut();
    let status = unsafe { lmtp_estimate_pair(data, a, b, cfg.as_ptr(), &mut est) };
    assert_eq!(status, LmtpStatus::Ok);
    assert!(lmtp_last_error().is_null());

    let mut theta = vec![0.0; 8];
    assert_eq!(
        unsafe { lmtp_estimate_theta(est, theta.as_mut_ptr(), 8) },
        LmtpStatus::Ok
    );
    assert_eq!(
        unsafe { lmtp_estimate_theta(est, theta.as_mut_ptr(), 7) },
        LmtpStatus::InvalidInput
    );
    assert!(last_error().contains("need 8"));

    let contrast = CString::new("baseline").unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_inference_json(est, contrast.as_ptr(), 0.05, &mut json) },
        LmtpStatus::Ok
    );
    let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["locals"].as_array().unwrap().len(), 3);
    let first = report["locals"][0]["estimate"].as_f64().unwrap();
    assert!((first - (theta[5] - theta[4] - (theta[1] - theta[0]))).abs() < 1e-12);

    let mut truth = ptr::null_mut();
    assert_eq!(unsafe { lmtp_truth_json(1.0, &mut truth) }, LmtpStatus::Ok);
    let truth: serde_json::Value = serde_json::from_str(&take_string(truth)).unwrap();
    assert_eq!(truth["gamma"].as_array().unwrap().len(), 4);

    unsafe {
        lmtp_estimate_free(est);
        lmtp_policy_free(a);
        lmtp_policy_free(b);
        lmtp_dataset_free(data);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut data = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_dataset_from_csv(ptr::null(), &mut data) },
        LmtpStatus::NullPointer
    );
    assert!(last_error().contains("text"));

    let bad = CString::new("L1_1,A1,Y1\n1,2,x\n").unwrap();
    assert_eq!(
        unsafe { lmtp_dataset_from_csv(bad.as_ptr(), &mut data) },
        LmtpStatus::InvalidInput
    );
    let msg = last_error();
    assert!(msg.contains("row 1") && msg.contains("Y1"), "{msg}");
    assert!(data.is_null());

    let missing = CString::new("/no/such/dir/data.csv").unwrap();
    assert_eq!(
        unsafe { lmtp_dataset_load_csv(missing.as_ptr(), &mut data) },
        LmtpStatus::Io
    );

    let spec = CString::new("bogus:1").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_policy_parse(spec.as_ptr(), &mut p) },
        LmtpStatus::InvalidInput
    );

    assert_eq!(
        unsafe { lmtp_dataset_simulate(-1.0, 10, 0, &mut data) },
        LmtpStatus::InvalidInput
    );
    assert_eq!(
        unsafe { lmtp_truth_json(0.0, ptr::null_mut()) },
        LmtpStatus::NullPointer
    );

    unsafe {
        lmtp_dataset_free(ptr::null_mut());
        lmtp_policy_free(ptr::null_mut());
        lmtp_estimate_free(ptr::null_mut());
        lmtp_string_free(ptr::null_mut());
    }
}

#[test]
fn identical_policies_give_zero_contrast() {
    let text = CString::new(
        "L1_1,A1,Y1,L2_1,A2,Y2\n0.1,1,2,0.3,1.5,2.5\n0.2,2,3,0.1,2.5,3.3\n-0.4,1.5,2.2,0.6,0.9,2.9\n",
    )
    .unwrap();
    let mut data = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_dataset_from_csv(text.as_ptr(), &mut data) },
        LmtpStatus::Ok
    );
    let a = policy("identity");
    let cfg = CString::new(r#"{"folds": 1}"#).unwrap();
    let mut est = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_estimate_pair(data, a, a, cfg.as_ptr(), &mut est) },
        LmtpStatus::Ok
    );
    let contrast = CString::new("baseline").unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { lmtp_inference_json(est, contrast.as_ptr(), 0.05, &mut json) },
        LmtpStatus::Ok
    );
    let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["locals"][0]["estimate"], 0.0);
    assert_eq!(report["wald"]["p"], 1.0);
    unsafe {
        lmtp_estimate_free(est);
        lmtp_policy_free(a);
        lmtp_dataset_free(data);
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("lmtp.h")
}

#[test]
fn header_declares_the_whole_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "lmtp_last_error",
        "lmtp_version",
        "lmtp_string_free",
        "lmtp_dataset_load_csv",
        "lmtp_dataset_from_csv",
        "lmtp_dataset_simulate",
        "lmtp_dataset_shape",
        "lmtp_dataset_free",
        "lmtp_policy_parse",
        "lmtp_policy_free",
        "lmtp_estimate_pair",
        "lmtp_estimate_tau",
        "lmtp_estimate_theta",
        "lmtp_inference_json",
        "lmtp_estimate_free",
        "lmtp_truth_json",
        "typedef struct LmtpDataset LmtpDataset",
        "LMTP_STATUS_PANIC = 6",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("liblmtp_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "lmtp.h"

int main(void) {
    LmtpDataset *data = NULL;
    if (lmtp_dataset_simulate(0.0, 200, 3, &data) != LMTP_STATUS_OK) return 10;
    size_t n = 0, tau = 0;
    if (lmtp_dataset_shape(data, &n, &tau) != LMTP_STATUS_OK || n != 200 || tau != 4) return 11;
    LmtpPolicy *id = NULL;
    if (lmtp_policy_parse("identity", &id) != LMTP_STATUS_OK) return 12;
    LmtpEstimate *est = NULL;
    if (lmtp_estimate_pair(data, id, id, NULL, &est) != LMTP_STATUS_OK) return 13;
    double theta[8];
    if (lmtp_estimate_theta(est, theta, 8) != LMTP_STATUS_OK) return 14;
    for (int t = 0; t < 4; t++) if (theta[t] != theta[4 + t]) return 15;
    LmtpPolicy *bad = NULL;
    if (lmtp_policy_parse("nonsense", &bad) != LMTP_STATUS_INVALID_INPUT) return 16;
    if (lmtp_last_error() == NULL) return 17;
    char *json = NULL;
    if (lmtp_truth_json(1.0, &json) != LMTP_STATUS_OK) return 18;
    if (strstr(json, "gamma") == NULL) return 19;
    lmtp_string_free(json);
    lmtp_estimate_free(est);
    lmtp_policy_free(id);
    lmtp_dataset_free(data);
    printf("ok %s\n", lmtp_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler is available");
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status.code()
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok 0.1.0"));
}
