use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use lucbrank_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lucb_last_error_message()) }.to_string_lossy().into_owned()
}

fn new_engine(boundaries: &[usize], first: &[f64]) -> *mut LucbEngine {
    let mut e = ptr::null_mut();
    let s = unsafe { lucb_engine_new(boundaries.as_ptr(), boundaries.len(), 0.0, 0.1, first.as_ptr(), first.len(), &mut e) };
    assert_eq!(s, LucbStatus::Ok, "{}", last_error());
    e
}

/// Runs to completion with a deterministic reward rule.
fn drive(e: *mut LucbEngine, reward: impl Fn(usize, u64) -> f64) -> u64 {
    let mut rounds = 0;
    loop {
        let mut done = false;
        assert_eq!(unsafe { lucb_engine_is_done(e, &mut done) }, LucbStatus::Ok);
        if done {
            return rounds;
        }
        let mut len = 0;
        let s = unsafe { lucb_engine_round_requests(e, ptr::null_mut(), ptr::null_mut(), 0, &mut len) };
        assert_eq!(s, LucbStatus::BufferTooSmall);
        let mut arms = vec![0usize; len];
        let mut bounds = vec![0usize; len];
        let s = unsafe { lucb_engine_round_requests(e, arms.as_mut_ptr(), bounds.as_mut_ptr(), len, &mut len) };
        assert_eq!(s, LucbStatus::Ok);
        let rewards: Vec<f64> = arms.iter().map(|&a| reward(a, rounds)).collect();
        assert_eq!(unsafe { lucb_engine_apply_round(e, rewards.as_ptr(), rewards.len()) }, LucbStatus::Ok);
        rounds += 1;
        assert!(rounds < 100_000);
    }
}

#[test]
fn engine_round_trip() {
    let e = new_engine(&[1], &[1.0, 0.0, 0.0]);
    // Arm 0 always wins, others alternate.
    drive(e, |a, r| if a == 0 { 1.0 } else { (r % 2) as f64 });

    let mut labels = [9usize; 3];
    assert_eq!(unsafe { lucb_engine_cluster_labels(e, labels.as_mut_ptr(), 3) }, LucbStatus::Ok);
    assert_eq!(labels, [0, 1, 1]);
    let mut ranks = [0usize; 3];
    assert_eq!(unsafe { lucb_engine_ranks(e, ranks.as_mut_ptr(), 3) }, LucbStatus::Ok);
    assert_eq!(ranks[0], 1);
    assert_eq!(unsafe { lucb_engine_ranks(e, ranks.as_mut_ptr(), 2) }, LucbStatus::BufferTooSmall);

    let mut total = 0u64;
    let mut k = 0usize;
    unsafe {
        assert_eq!(lucb_engine_total_samples(e, &mut total), LucbStatus::Ok);
        assert_eq!(lucb_engine_num_arms(e, &mut k), LucbStatus::Ok);
    }
    assert!(total > 3);
    assert_eq!(k, 3);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { lucb_engine_to_json(e, &mut json) }, LucbStatus::Ok);
    let mut restored = ptr::null_mut();
    assert_eq!(unsafe { lucb_engine_from_json(json, &mut restored) }, LucbStatus::Ok);
    let mut json2 = ptr::null_mut();
    assert_eq!(unsafe { lucb_engine_to_json(restored, &mut json2) }, LucbStatus::Ok);
    unsafe {
        assert_eq!(CStr::from_ptr(json), CStr::from_ptr(json2));
        lucb_string_free(json);
        lucb_string_free(json2);
        lucb_engine_free(restored);
        lucb_engine_free(e);
    }
}

#[test]
fn errors_are_reported() {
    let mut e = ptr::null_mut();
    let s = unsafe { lucb_engine_new([2usize].as_ptr(), 1, 0.0, 0.1, [0.5, 1.5, 0.0].as_ptr(), 3, &mut e) };
    assert_eq!(s, LucbStatus::InvalidArgument);
    assert!(last_error().contains("1.5"), "{}", last_error());
    assert!(e.is_null());

    let s = unsafe { lucb_engine_new([3usize, 2].as_ptr(), 2, 0.0, 0.1, [0.0; 4].as_ptr(), 4, &mut e) };
    assert_eq!(s, LucbStatus::InvalidArgument);
    let s = unsafe { lucb_engine_new([2usize].as_ptr(), 1, 0.0, 2.0, [0.0; 4].as_ptr(), 4, &mut e) };
    assert_eq!(s, LucbStatus::Domain);
    let s = unsafe { lucb_engine_new(ptr::null(), 1, 0.0, 0.1, [0.0; 4].as_ptr(), 4, &mut e) };
    assert_eq!(s, LucbStatus::NullPointer);
    let s = unsafe { lucb_engine_new([2usize].as_ptr(), 1, 0.0, 0.1, [0.0; 4].as_ptr(), 4, ptr::null_mut()) };
    assert_eq!(s, LucbStatus::NullPointer);

    let e = new_engine(&[2], &[1.0, 1.0, 0.0, 0.0]);
    let mut len = 0;
    unsafe { lucb_engine_round_requests(e, ptr::null_mut(), ptr::null_mut(), 0, &mut len) };
    let short = vec![0.5; len.saturating_sub(1)];
    assert_eq!(unsafe { lucb_engine_apply_round(e, short.as_ptr(), short.len()) }, LucbStatus::InvalidArgument);
    let mut done = false;
    assert_eq!(unsafe { lucb_engine_is_done(ptr::null(), &mut done) }, LucbStatus::NullPointer);
    unsafe { lucb_engine_free(e) };
    unsafe { lucb_engine_free(ptr::null_mut()) };

    let bad = CString::new("{\"round\": 1}").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { lucb_engine_from_json(bad.as_ptr(), &mut out) }, LucbStatus::Serialization);
    assert!(out.is_null());
}

#[test]
fn tampered_json_is_rejected() {
    let e = new_engine(&[1], &[1.0, 0.0]);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { lucb_engine_to_json(e, &mut json) }, LucbStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { lucb_string_free(json) };
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["total_samples"] = serde_json::json!(77);
    let tampered = CString::new(v.to_string()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { lucb_engine_from_json(tampered.as_ptr(), &mut out) }, LucbStatus::Serialization);
    unsafe { lucb_engine_free(e) };
}

#[test]
fn math_kernels() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(lucb_kl_bernoulli(0.5, 0.5, &mut v), LucbStatus::Ok);
        assert_eq!(v, 0.0);
        assert_eq!(lucb_kl_bernoulli(0.3, 0.7, &mut v), LucbStatus::Ok);
        assert!((v - 0.4 * (3.0f64 / 7.0).ln().abs()).abs() < 1e-12);
        assert_eq!(lucb_kl_bernoulli(0.5, 1.0, &mut v), LucbStatus::Domain);
        assert_eq!(lucb_kl_bernoulli(-0.1, 0.5, &mut v), LucbStatus::Domain);

        let mut u = 0.0;
        let mut l = 0.0;
        assert_eq!(lucb_kl_ucb_upper(0.4, 50, 3.0, &mut u), LucbStatus::Ok);
        assert_eq!(lucb_kl_ucb_lower(0.4, 50, 3.0, &mut l), LucbStatus::Ok);
        assert!(l < 0.4 && 0.4 < u);
        assert!((50.0 * lucbrank::kl_bernoulli(0.4, u).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(lucb_kl_ucb_upper(0.4, 0, 3.0, &mut u), LucbStatus::Domain);

        let mut a = 0.0;
        let mut b = 0.0;
        assert_eq!(lucb_chernoff_information(0.2, 0.6, &mut a), LucbStatus::Ok);
        assert_eq!(lucb_chernoff_information(0.6, 0.2, &mut b), LucbStatus::Ok);
        assert!((a - b).abs() < 1e-12 && a > 0.0);
        assert_eq!(lucb_chernoff_information(0.2, 0.6, ptr::null_mut()), LucbStatus::NullPointer);
    }
}

/// Directory holding the built library artifacts (`target/<profile>`).
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("liblucbrank_ffi.a");
    let compiler = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&compiler).arg("--version").output().is_err() {
        eprintln!("skipping: no static library at {} or no C compiler", lib.display());
        return;
    }
    let out = tempfile_path("lucb_smoke");
    let status = Command::new(&compiler)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "smoke exited with {:?}", run.status);
    let text = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(&fields[..4], ["0", "1", "0", "1"]);
    let _ = std::fs::remove_file(out);
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{stem}_{}", std::process::id()))
}
