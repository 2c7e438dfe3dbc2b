use std::ffi::CStr;
use std::ptr;

use fedmvc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fmvc_last_error()) }.to_str().unwrap().to_string()
}

fn small_config(clusters: usize) -> FmvcConfig {
    let mut cfg = std::mem::MaybeUninit::uninit();
    assert_eq!(unsafe { fmvc_config_default(clusters, cfg.as_mut_ptr()) }, FmvcStatus::Ok);
    let mut cfg = unsafe { cfg.assume_init() };
    cfg.rounds = 1;
    cfg.epochs = 3;
    cfg.pretrain_epochs = 3;
    cfg.k_neighbors = 5;
    cfg.parallel = 0;
    cfg
}

#[test]
fn metrics_match_core() {
    let pred = [1u32, 1, 0, 0, 2, 2];
    let truth = [0u32, 0, 1, 1, 1, 2];
    let mut s = FmvcScores::default();
    assert_eq!(unsafe { fmvc_evaluate(pred.as_ptr(), truth.as_ptr(), 6, &mut s) }, FmvcStatus::Ok);
    let p: Vec<usize> = pred.iter().map(|&v| v as usize).collect();
    let t: Vec<usize> = truth.iter().map(|&v| v as usize).collect();
    let core = fedmvc::metrics::evaluate(&p, &t).unwrap();
    assert_eq!((s.acc, s.nmi, s.ari), (core.acc, core.nmi, core.ari));
    let mut acc = 0.0;
    assert_eq!(unsafe { fmvc_accuracy(pred.as_ptr(), truth.as_ptr(), 6, &mut acc) }, FmvcStatus::Ok);
    // Hand count: matching 1->0, 0->1, 2->2 covers 5 of 6.
    assert!((acc - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn null_pointers_are_reported() {
    let mut s = FmvcScores::default();
    let st = unsafe { fmvc_evaluate(ptr::null(), ptr::null(), 3, &mut s) };
    assert_eq!(st, FmvcStatus::NullPointer);
    assert!(last_error().contains("pred"), "{}", last_error());
    assert_eq!(unsafe { fmvc_run(ptr::null(), ptr::null(), ptr::null_mut()) }, FmvcStatus::NullPointer);
    unsafe {
        fmvc_dataset_free(ptr::null_mut());
        fmvc_outcome_free(ptr::null_mut());
    }
    assert_eq!(unsafe { fmvc_dataset_samples(ptr::null()) }, 0);
}

#[test]
fn wrong_cluster_count_is_config_error() {
    let dims = [3usize, 4];
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { fmvc_dataset_synth(20, 2, dims.as_ptr(), 2, 6.0, 1, &mut ds) }, FmvcStatus::Ok);
    let cfg = small_config(50);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fmvc_run(ds, &cfg, &mut out) }, FmvcStatus::Config);
    assert!(out.is_null());
    assert!(last_error().contains("clusters"), "{}", last_error());
    unsafe { fmvc_dataset_free(ds) };
}

#[test]
fn built_dataset_runs_and_reports() {
    let n = 24;
    let a: Vec<f64> = (0..n * 2).map(|i| if (i / 2) < n / 2 { 0.1 * i as f64 } else { 50.0 + 0.1 * i as f64 }).collect();
    let b: Vec<f64> = (0..n * 3).map(|i| if (i / 3) < n / 2 { -(i as f64) * 0.05 } else { 30.0 - (i as f64) * 0.05 }).collect();
    let mut present = vec![1u8; n];
    present[3] = 0;
    present[20] = 0;
    let labels: Vec<u32> = (0..n as u32).map(|i| u32::from(i >= n as u32 / 2)).collect();

    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(fmvc_dataset_new(n, &mut ds), FmvcStatus::Ok);
        assert_eq!(fmvc_dataset_add_view(ds, a.as_ptr(), 2, ptr::null()), FmvcStatus::Ok);
        assert_eq!(fmvc_dataset_add_view(ds, b.as_ptr(), 3, present.as_ptr()), FmvcStatus::Ok);
        assert_eq!(fmvc_dataset_set_labels(ds, labels.as_ptr()), FmvcStatus::Ok);
        assert_eq!(fmvc_dataset_standardize(ds), FmvcStatus::Ok);
        assert_eq!(fmvc_dataset_views(ds), 2);
        assert_eq!(fmvc_dataset_complete(ds), n - 2);
    }
    let cfg = small_config(2);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fmvc_run(ds, &cfg, &mut out) }, FmvcStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { fmvc_outcome_records(out) }, 2);

    let mut got = vec![0u32; n];
    assert_eq!(unsafe { fmvc_outcome_labels(out, got.as_mut_ptr(), n - 1) }, FmvcStatus::BufferTooSmall);
    assert_eq!(unsafe { fmvc_outcome_labels(out, got.as_mut_ptr(), n) }, FmvcStatus::Ok);
    assert!(got.iter().all(|&l| l < 2));

    let mut s = FmvcScores::default();
    assert_eq!(unsafe { fmvc_outcome_metrics(out, 1, &mut s) }, FmvcStatus::Ok);
    let mut direct = FmvcScores::default();
    unsafe { fmvc_evaluate(got.as_ptr(), labels.as_ptr(), n, &mut direct) };
    assert_eq!(s, direct);
    assert_eq!(unsafe { fmvc_outcome_metrics(out, 2, &mut s) }, FmvcStatus::InvalidArgument);

    let mut needed = 0usize;
    assert_eq!(
        unsafe { fmvc_outcome_records_json(out, ptr::null_mut(), 0, &mut needed) },
        FmvcStatus::BufferTooSmall
    );
    let mut buf = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { fmvc_outcome_records_json(out, buf.as_mut_ptr(), needed, &mut needed) }, FmvcStatus::Ok);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(text.len() + 1, needed);
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["round"], i);
    }
    unsafe {
        fmvc_outcome_free(out);
        fmvc_dataset_free(ds);
    }
}

#[test]
fn unlabeled_outcome_has_no_metrics() {
    let n = 12;
    let a: Vec<f64> = (0..n * 2).map(|i| ((i * 7) % 11) as f64).collect();
    let mut ds = ptr::null_mut();
    unsafe {
        fmvc_dataset_new(n, &mut ds);
        fmvc_dataset_add_view(ds, a.as_ptr(), 2, ptr::null());
    }
    let cfg = small_config(2);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fmvc_run(ds, &cfg, &mut out) }, FmvcStatus::Ok, "{}", last_error());
    let mut s = FmvcScores::default();
    assert_eq!(unsafe { fmvc_outcome_metrics(out, 0, &mut s) }, FmvcStatus::Unavailable);
    unsafe {
        fmvc_outcome_free(out);
        fmvc_dataset_free(ds);
    }
}

#[test]
fn apply_missing_through_handle() {
    let dims = [4usize, 5, 3];
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(fmvc_dataset_synth(40, 2, dims.as_ptr(), 3, 6.0, 2, &mut ds), FmvcStatus::Ok);
        assert_eq!(fmvc_dataset_apply_missing(ds, 0.5, 9, 0.0), FmvcStatus::Ok);
        assert_eq!(fmvc_dataset_complete(ds), 20);
        assert_eq!(fmvc_dataset_apply_missing(ds, 1.5, 9, 0.0), FmvcStatus::InvalidArgument);
        fmvc_dataset_free(ds);
    }
}
