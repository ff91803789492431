//! C ABI for the simassoc tracker.
//!
//! Objects are opaque handles created by `sa_*_new` functions and released
//! with the matching `sa_*_free`. Every fallible call returns an
//! [`SaStatus`]; on failure `sa_last_error` describes what went wrong on the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use simassoc::baselines::{hungarian, CostKind};
use simassoc::config::RunConfig;
use simassoc::data::Detection;
use simassoc::geometry::{BoundingBox3D, EgoPose};
use simassoc::pipeline::Models;
use simassoc::tensor::Tensor;
use simassoc::tracker::{Solver, Tracker};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Model = 4,
    Tracking = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaCost {
    Euclidean = 0,
    Manhattan = 1,
    Bhattacharyya = 2,
    ChiSquare = 3,
    SimNet = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaSolver {
    AssocNet = 0,
    Hungarian = 1,
    Greedy = 2,
}

/// Box in the ego frame: centre, `l, w, h` and yaw.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SaBox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SaPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SaDetection {
    pub bbox: SaBox,
    pub score: f64,
}

/// A reported track.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SaTrack {
    pub id: u64,
    pub bbox: SaBox,
    pub existence: f64,
}

/// Opaque run configuration.
pub struct SaConfig {
    inner: RunConfig,
}

/// Opaque tracker with its networks.
pub struct SaTracker {
    config: RunConfig,
    models: Models,
    cost: CostKind,
    solver: Solver,
    tracker: Tracker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: SaStatus, msg: impl Into<String>) -> SaStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into [`SaStatus::Panic`].
fn guard(f: impl FnOnce() -> SaStatus) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == SaStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(SaStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SaStatus> {
    if p.is_null() {
        return Err(fail(SaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

impl From<SaBox> for BoundingBox3D {
    fn from(b: SaBox) -> Self {
        BoundingBox3D::new([b.cx, b.cy, b.cz], [b.l, b.w, b.h], b.yaw)
    }
}

impl From<BoundingBox3D> for SaBox {
    fn from(b: BoundingBox3D) -> Self {
        SaBox { cx: b.cx, cy: b.cy, cz: b.cz, l: b.l, w: b.w, h: b.h, yaw: b.yaw }
    }
}

impl From<SaCost> for CostKind {
    fn from(c: SaCost) -> Self {
        match c {
            SaCost::Euclidean => CostKind::Euclidean,
            SaCost::Manhattan => CostKind::Manhattan,
            SaCost::Bhattacharyya => CostKind::Bhattacharyya,
            SaCost::ChiSquare => CostKind::ChiSquare,
            SaCost::SimNet => CostKind::SimNet,
        }
    }
}

impl From<SaSolver> for Solver {
    fn from(s: SaSolver) -> Self {
        match s {
            SaSolver::AssocNet => Solver::AssocNet,
            SaSolver::Hungarian => Solver::Hungarian,
            SaSolver::Greedy => Solver::Greedy,
        }
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with default values.
#[no_mangle]
pub extern "C" fn sa_config_new() -> *mut SaConfig {
    Box::into_raw(Box::new(SaConfig { inner: RunConfig::default() }))
}

/// Parses a TOML configuration into `*out`.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_config_from_toml(toml: *const c_char, out: *mut *mut SaConfig) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return fail(SaStatus::NullPointer, "out is null");
        }
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_toml(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(SaConfig { inner: c }));
                SaStatus::Ok
            }
            Err(e) => fail(SaStatus::Config, e.to_string()),
        }
    })
}

/// Applies a `key.path=value` override.
///
/// # Safety
/// `cfg` must come from this library; `assignment` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sa_config_set(cfg: *mut SaConfig, assignment: *const c_char) -> SaStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(SaStatus::NullPointer, "cfg is null");
        };
        let a = match str_arg(assignment, "assignment") {
            Ok(a) => a,
            Err(s) => return s,
        };
        match cfg.inner.with_overrides(&[a.to_string()]) {
            Ok(c) => {
                cfg.inner = c;
                SaStatus::Ok
            }
            Err(e) => fail(SaStatus::Config, e.to_string()),
        }
    })
}

/// Number of `f32` values in one appearance tensor under `cfg`.
///
/// # Safety
/// `cfg` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sa_config_appearance_len(cfg: *const SaConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.appearance.len())
}

/// # Safety
/// `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sa_config_free(cfg: *mut SaConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Creates a tracker. `models_dir` holds `simnet.ckpt` and
/// `assocnet.ckpt`; it may be null when neither network is needed.
///
/// # Safety
/// `cfg` must come from this library, `models_dir` must be null or
/// NUL-terminated, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_tracker_new(
    cfg: *const SaConfig,
    models_dir: *const c_char,
    cost: SaCost,
    solver: SaSolver,
    out: *mut *mut SaTracker,
) -> SaStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(SaStatus::NullPointer, "cfg is null");
        };
        if out.is_null() {
            return fail(SaStatus::NullPointer, "out is null");
        }
        let (cost, solver): (CostKind, Solver) = (cost.into(), solver.into());
        let needs_models = cost == CostKind::SimNet || solver == Solver::AssocNet;
        let models = if needs_models {
            let dir = match str_arg(models_dir, "models_dir") {
                Ok(d) => d,
                Err(s) => return s,
            };
            match Models::load(Path::new(dir), cost, solver) {
                Ok(m) => m,
                Err(e) => return fail(SaStatus::Model, e.to_string()),
            }
        } else {
            Models { simnet: None, assocnet: None }
        };
        let config = cfg.inner.clone();
        let tracker = Tracker::new(config.tracker);
        *out = Box::into_raw(Box::new(SaTracker { config, models, cost, solver, tracker }));
        SaStatus::Ok
    })
}

/// Processes one frame. `appearance` holds `n` consecutive tensors of
/// `sa_config_appearance_len` values each (`H×W×C`, row-major); it may be
/// null when `n` is 0.
///
/// # Safety
/// Pointers must be valid for `n` detections and `n` appearance tensors.
#[no_mangle]
pub unsafe extern "C" fn sa_tracker_step(
    tracker: *mut SaTracker,
    detections: *const SaDetection,
    appearance: *const f32,
    n: usize,
    pose: SaPose,
    dt: f64,
) -> SaStatus {
    guard(|| {
        let Some(t) = tracker.as_mut() else {
            return fail(SaStatus::NullPointer, "tracker is null");
        };
        if n > 0 && (detections.is_null() || appearance.is_null()) {
            return fail(SaStatus::NullPointer, "detections or appearance is null");
        }
        if !dt.is_finite() || dt < 0.0 {
            return fail(SaStatus::InvalidArgument, format!("dt must be finite and >= 0, got {dt}"));
        }
        let shape = t.config.appearance.shape();
        let len = t.config.appearance.len();
        let mut dets = Vec::with_capacity(n);
        for k in 0..n {
            let d = *detections.add(k);
            let bbox: BoundingBox3D = d.bbox.into();
            if !bbox.is_valid() {
                return fail(SaStatus::InvalidArgument, format!("detection {k} has an invalid box"));
            }
            let data = std::slice::from_raw_parts(appearance.add(k * len), len).to_vec();
            let appearance = match Tensor::new(shape.to_vec(), data) {
                Ok(a) => a,
                Err(e) => return fail(SaStatus::InvalidArgument, e.to_string()),
            };
            dets.push(Detection { bbox, appearance, score: d.score, source: None });
        }
        let mut assoc = match t.models.associator(&t.config, t.cost, t.solver) {
            Ok(a) => a,
            Err(e) => return fail(SaStatus::Model, e.to_string()),
        };
        let pose = EgoPose::new(pose.x, pose.y, pose.z, pose.yaw);
        match t.tracker.step(&dets, pose, dt, &mut assoc) {
            Ok(_) => SaStatus::Ok,
            Err(e) => fail(SaStatus::Tracking, e.to_string()),
        }
    })
}

/// Number of tracks currently reported.
///
/// # Safety
/// `tracker` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sa_tracker_reported_count(tracker: *const SaTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.tracker.reported().count())
}

/// Copies reported tracks into `out` (capacity `cap`) and their count into
/// `*written`. Returns `BufferTooSmall` (with `*written` set to the needed
/// count) when `cap` is insufficient.
///
/// # Safety
/// `out` must be valid for `cap` elements; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sa_tracker_reported(
    tracker: *const SaTracker,
    out: *mut SaTrack,
    cap: usize,
    written: *mut usize,
) -> SaStatus {
    guard(|| {
        let Some(t) = tracker.as_ref() else {
            return fail(SaStatus::NullPointer, "tracker is null");
        };
        if written.is_null() {
            return fail(SaStatus::NullPointer, "written is null");
        }
        let tracks: Vec<SaTrack> = t
            .tracker
            .reported()
            .map(|tr| SaTrack { id: tr.id, bbox: tr.bbox().into(), existence: tr.existence })
            .collect();
        *written = tracks.len();
        if tracks.len() > cap {
            return fail(SaStatus::BufferTooSmall, format!("need room for {} tracks", tracks.len()));
        }
        if !tracks.is_empty() {
            if out.is_null() {
                return fail(SaStatus::NullPointer, "out is null");
            }
            ptr::copy_nonoverlapping(tracks.as_ptr(), out, tracks.len());
        }
        SaStatus::Ok
    })
}

/// # Safety
/// `tracker` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sa_tracker_free(tracker: *mut SaTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Minimum-cost assignment of a row-major `rows × cols` matrix; NaN marks
/// forbidden cells. Writes the assigned column of each row (or -1) into
/// `row_to_col`.
///
/// # Safety
/// `costs` must hold `rows·cols` values and `row_to_col` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn sa_hungarian(costs: *const f64, rows: usize, cols: usize, row_to_col: *mut i64) -> SaStatus {
    guard(|| {
        if rows == 0 {
            return SaStatus::Ok;
        }
        if row_to_col.is_null() || (cols > 0 && costs.is_null()) {
            return fail(SaStatus::NullPointer, "costs or row_to_col is null");
        }
        let matrix: Vec<Vec<Option<f64>>> = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| {
                        let v = *costs.add(r * cols + c);
                        (!v.is_nan()).then_some(v)
                    })
                    .collect()
            })
            .collect();
        match hungarian(&matrix) {
            Ok(a) => {
                let out = std::slice::from_raw_parts_mut(row_to_col, rows);
                out.fill(-1);
                for (r, c) in a.pairs {
                    out[r] = c as i64;
                }
                SaStatus::Ok
            }
            Err(e) => fail(SaStatus::InvalidArgument, e.to_string()),
        }
    })
}
