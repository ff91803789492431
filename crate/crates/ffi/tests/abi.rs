use std::ffi::{CStr, CString};
use std::ptr;

use simassoc_ffi::*;

fn last_error() -> String {
    let p = sa_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn det(x: f64, y: f64) -> SaDetection {
    SaDetection { bbox: SaBox { cx: x, cy: y, cz: -0.9, l: 4.0, w: 1.8, h: 1.5, yaw: 0.0 }, score: 0.9 }
}

unsafe fn small_config() -> *mut SaConfig {
    let cfg = sa_config_new();
    for s in ["appearance.height=4", "appearance.width=4", "appearance.channels=3"] {
        let s = CString::new(s).unwrap();
        assert_eq!(sa_config_set(cfg, s.as_ptr()), SaStatus::Ok);
    }
    cfg
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(sa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(sa_config_set(ptr::null_mut(), ptr::null()), SaStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut out = ptr::null_mut();
        assert_eq!(sa_config_from_toml(ptr::null(), &mut out), SaStatus::NullPointer);
        assert_eq!(sa_tracker_reported_count(ptr::null()), 0);
        sa_config_free(ptr::null_mut());
        sa_tracker_free(ptr::null_mut());
    }
}

#[test]
fn bad_override_is_a_config_error() {
    unsafe {
        let cfg = sa_config_new();
        let s = CString::new("tracker.no_such_key=1").unwrap();
        assert_eq!(sa_config_set(cfg, s.as_ptr()), SaStatus::Config);
        assert!(!last_error().is_empty());
        let toml = CString::new("version = 99").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(sa_config_from_toml(toml.as_ptr(), &mut out), SaStatus::Config);
        assert!(out.is_null());
        sa_config_free(cfg);
    }
}

#[test]
fn missing_models_are_a_model_error() {
    unsafe {
        let cfg = sa_config_new();
        let dir = CString::new("/nonexistent/models").unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(sa_tracker_new(cfg, dir.as_ptr(), SaCost::SimNet, SaSolver::AssocNet, &mut t), SaStatus::Model);
        assert!(t.is_null());
        assert!(last_error().contains("simnet"));
        sa_config_free(cfg);
    }
}

#[test]
fn classical_tracker_follows_a_target() {
    unsafe {
        let cfg = small_config();
        let len = sa_config_appearance_len(cfg);
        assert_eq!(len, 48);
        let mut t = ptr::null_mut();
        assert_eq!(sa_tracker_new(cfg, ptr::null(), SaCost::Euclidean, SaSolver::Hungarian, &mut t), SaStatus::Ok);
        sa_config_free(cfg);

        let pose = SaPose::default();
        let app = vec![0.5f32; 2 * len];
        for k in 0..20 {
            let d = [det(0.0, 10.0 + 0.5 * k as f64), det(8.0, 30.0)];
            assert_eq!(sa_tracker_step(t, d.as_ptr(), app.as_ptr(), 2, pose, 0.1), SaStatus::Ok);
        }
        let n = sa_tracker_reported_count(t);
        assert_eq!(n, 2);

        let mut written = 0;
        let mut small = [SaTrack::default(); 1];
        assert_eq!(sa_tracker_reported(t, small.as_mut_ptr(), 1, &mut written), SaStatus::BufferTooSmall);
        assert_eq!(written, 2);

        let mut out = vec![SaTrack::default(); n];
        assert_eq!(sa_tracker_reported(t, out.as_mut_ptr(), n, &mut written), SaStatus::Ok);
        let ids: Vec<u64> = out.iter().map(|x| x.id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert!((out[0].bbox.cy - 19.5).abs() < 0.2, "{:?}", out[0]);
        assert!(out.iter().all(|x| x.existence > 0.5));

        // empty frame with null pointers is fine
        assert_eq!(sa_tracker_step(t, ptr::null(), ptr::null(), 0, pose, 0.1), SaStatus::Ok);
        assert_eq!(sa_tracker_step(t, ptr::null(), ptr::null(), 0, pose, f64::NAN), SaStatus::InvalidArgument);
        let bad = [SaDetection { bbox: SaBox { l: -1.0, ..det(0.0, 0.0).bbox }, score: 1.0 }];
        assert_eq!(sa_tracker_step(t, bad.as_ptr(), app.as_ptr(), 1, pose, 0.1), SaStatus::InvalidArgument);
        sa_tracker_free(t);
    }
}

#[test]
fn hungarian_matches_brute_force() {
    let costs = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
    let mut out = [0i64; 3];
    unsafe {
        assert_eq!(sa_hungarian(costs.as_ptr(), 3, 3, out.as_mut_ptr()), SaStatus::Ok);
    }
    assert_eq!(out, [1, 0, 2]);

    let forbidden = [f64::NAN, 1.0, f64::NAN, f64::NAN];
    let mut out = [0i64; 2];
    unsafe {
        assert_eq!(sa_hungarian(forbidden.as_ptr(), 2, 2, out.as_mut_ptr()), SaStatus::Ok);
    }
    assert_eq!(out, [1, -1]);
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/simassoc.h")).unwrap();
    for name in ["sa_tracker_new", "sa_tracker_step", "sa_hungarian", "sa_last_error", "SA_STATUS_OK", "SaTrack"] {
        assert!(h.contains(name), "{name} missing from header");
    }
}
