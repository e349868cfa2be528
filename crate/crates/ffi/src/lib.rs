//! C ABI over the `objreloc` library.
//!
//! Every fallible function returns an [`ObjrelocStatus`]; on failure the
//! message is available from [`objreloc_last_error`] on the same thread.
//! Composite inputs and outputs travel as UTF-8 JSON in the same formats as
//! the CLI's files. Strings returned through out-parameters are owned by the
//! caller and released with [`objreloc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use objreloc::detection::frame_from_json_line;
use objreloc::error::Error;
use objreloc::geom::Vec3;
use objreloc::object_map::ObjectMap;
use objreloc::pipeline::{relocalise, run_benchmark, BenchConfig, RelocParams};
use objreloc::registration::{horn_ao, SurfaceModel, WeightedPair};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjrelocStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string was not UTF-8 or a JSON argument did not parse.
    InvalidArgument = 2,
    /// Parameters failed validation.
    Config = 3,
    /// A file could not be read or written, or its contents were malformed.
    Io = 4,
    /// The data admits no solution (too few pairs, degenerate geometry).
    Degenerate = 5,
    /// An internal invariant was violated.
    Invariant = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// A finalized object map with its surface model. Opaque to C.
pub struct ObjrelocMap {
    map: ObjectMap,
    surface: SurfaceModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> ObjrelocStatus {
    match err {
        Error::Config { .. } | Error::InvalidInput(_) | Error::PlacementFailure { .. } | Error::MissingGroundTruth(_) => {
            ObjrelocStatus::Config
        }
        Error::Io { .. } | Error::Parse { .. } => ObjrelocStatus::Io,
        Error::TooFewPairs(_)
        | Error::CollinearPoints
        | Error::DegenerateRotationMean
        | Error::NoConsensus
        | Error::NoCorrespondences(_)
        | Error::NonDecreasingCost
        | Error::EmptyModel => ObjrelocStatus::Degenerate,
        Error::Invariant(_) => ObjrelocStatus::Invariant,
    }
}

struct Fail(ObjrelocStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ObjrelocStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ObjrelocStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ObjrelocStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(ObjrelocStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(ObjrelocStatus::InvalidArgument, format!("{name}: {e}")))
}

fn null(name: &str) -> Fail {
    Fail(ObjrelocStatus::NullArgument, format!("{name} is null"))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(ObjrelocStatus::Invariant, "output contains a NUL byte".into()))
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn objreloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn objreloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn objreloc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a map JSON file and a surface file into a new handle.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn objreloc_map_load(
    map_path: *const c_char,
    surface_path: *const c_char,
    out: *mut *mut ObjrelocMap,
) -> ObjrelocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let map = ObjectMap::load(Path::new(str_arg(map_path, "map_path")?))?;
        let surface = SurfaceModel::load(Path::new(str_arg(surface_path, "surface_path")?))?;
        *out = Box::into_raw(Box::new(ObjrelocMap { map, surface }));
        Ok(())
    })
}

/// Releases a map handle. Null is ignored.
///
/// # Safety
/// `map` must come from [`objreloc_map_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn objreloc_map_free(map: *mut ObjrelocMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Number of objects in the map, 0 for null.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn objreloc_map_object_count(map: *const ObjrelocMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.len())
}

/// Relocalises one frame given as a detection record (one line of a
/// detection file). `params_json` may be null for defaults. On success
/// `*out_json` receives the result record.
///
/// A frame that cannot be relocalised is reported in the result's status,
/// not as an error.
///
/// # Safety
/// `map` must be a live handle, strings NUL-terminated, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn objreloc_relocalise(
    map: *const ObjrelocMap,
    frame_json: *const c_char,
    params_json: *const c_char,
    out_json: *mut *mut c_char,
) -> ObjrelocStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let m = map.as_ref().ok_or_else(|| null("map"))?;
        let frame = frame_from_json_line(str_arg(frame_json, "frame_json")?)
            .map_err(|e| Fail(ObjrelocStatus::InvalidArgument, format!("frame_json: {e}")))?;
        let params: RelocParams = if params_json.is_null() {
            RelocParams::default()
        } else {
            serde_json::from_str(str_arg(params_json, "params_json")?)
                .map_err(|e| Fail(ObjrelocStatus::InvalidArgument, format!("params_json: {e}")))?
        };
        params.icp.validate()?;
        let result = relocalise(&frame.to_lost(), &m.map, &m.surface, &params)?;
        let text = serde_json::to_string(&result).map_err(|e| Fail(ObjrelocStatus::Invariant, e.to_string()))?;
        *out_json = into_c_string(text)?;
        Ok(())
    })
}

/// Closed-form absolute orientation of `n` point pairs, `n >= 3`.
///
/// `frame_points` and `map_points` hold `3n` doubles, xyz per point. On
/// success the pose mapping frame to map is written as a row-major rotation
/// (9 doubles) and a translation (3 doubles).
///
/// # Safety
/// Input arrays must hold `3n` doubles; output arrays 9 and 3.
#[no_mangle]
pub unsafe extern "C" fn objreloc_horn_ao(
    frame_points: *const f64,
    map_points: *const f64,
    n: usize,
    out_rotation: *mut f64,
    out_translation: *mut f64,
) -> ObjrelocStatus {
    guard(|| {
        if frame_points.is_null() || map_points.is_null() {
            return Err(null("points"));
        }
        if out_rotation.is_null() || out_translation.is_null() {
            return Err(null("output"));
        }
        let a = std::slice::from_raw_parts(frame_points, 3 * n);
        let b = std::slice::from_raw_parts(map_points, 3 * n);
        let pairs: Vec<WeightedPair> = a
            .chunks_exact(3)
            .zip(b.chunks_exact(3))
            .map(|(p, q)| WeightedPair::isotropic(Vec3::new(p[0], p[1], p[2]), Vec3::new(q[0], q[1], q[2])))
            .collect();
        let pose = horn_ao(&pairs)?;
        let r = std::slice::from_raw_parts_mut(out_rotation, 9);
        for (i, v) in r.iter_mut().enumerate() {
            *v = pose.rotation[(i / 3, i % 3)];
        }
        std::slice::from_raw_parts_mut(out_translation, 3).copy_from_slice(pose.translation.as_slice());
        Ok(())
    })
}

/// Runs a benchmark from a config JSON document. On success `*out_json`
/// receives the report.
///
/// # Safety
/// `config_json` NUL-terminated, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn objreloc_bench(config_json: *const c_char, out_json: *mut *mut c_char) -> ObjrelocStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let cfg = BenchConfig::from_json(str_arg(config_json, "config_json")?)?;
        let report = run_benchmark(&cfg)?;
        *out_json = into_c_string(report.to_json())?;
        Ok(())
    })
}
