//! C ABI over `anchordist`.
//!
//! Objects cross the boundary as opaque heap handles (`AdCloud`, `AdAnchors`,
//! `AdMatrix`) created by `ad_*_new`/`ad_*_load` style calls and released with
//! the matching `ad_*_free`. Every fallible call returns an [`AdStatus`]; on
//! failure the message is kept per thread and read with [`ad_last_error`].
//! Panics never unwind into C, they surface as `AD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::time::Duration;

use anchordist::codec::escd;
use anchordist::io::{load_cloud, save_cloud, CloudFormat};
use anchordist::{
    AnchorSet, AnchorStrategy, CompletionConfig, DistanceMatrix, Error, Point3, PointCloud,
    PredictorSpec, SelectionOptions, SolverOptions,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Degenerate = 5,
    Diverged = 6,
    Predictor = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdStrategy {
    Fps = 0,
    /// `param` is the curvature threshold.
    Cluster = 1,
    /// `param` is the ball radius.
    BallQuery = 2,
}

/// Levenberg-Marquardt settings for [`ad_decode`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdSolverOptions {
    pub max_iters: usize,
    pub residual_tol: f64,
    pub damping_init: f64,
    pub damping_scale: f64,
    pub reflection_restarts: bool,
}

/// Settings for [`ad_complete`]. `predictor` is a path to an external
/// executable, or NULL for the identity predictor.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdCompletionOptions {
    pub k: usize,
    pub n_in: usize,
    pub m_out: usize,
    pub strategy: AdStrategy,
    pub strategy_param: f64,
    pub normalize: bool,
    pub predictor: *const c_char,
    pub timeout_seconds: f64,
}

pub struct AdCloud(PointCloud);

pub struct AdAnchors(AnchorSet);

pub struct AdMatrix(DistanceMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AdStatus {
    match err.root() {
        Error::Io { .. } => AdStatus::Io,
        Error::Parse { .. } | Error::Format { .. } => AdStatus::Parse,
        Error::EmptyCloud
        | Error::DegenerateNeighborhood { .. }
        | Error::DegenerateConfiguration(_)
        | Error::DegenerateAnchors { .. } => AdStatus::Degenerate,
        Error::SolverDiverged { .. } => AdStatus::Diverged,
        Error::ExternalFailed { .. } | Error::BadExternalOutput(_) => AdStatus::Predictor,
        _ => AdStatus::InvalidArgument,
    }
}

struct Fail(AdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AdStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AdStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdStatus::Ok,
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
            AdStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn points_from(xyz: *const f64, n: usize) -> Result<Vec<Point3<f64>>, Fail> {
    if xyz.is_null() {
        return Err(null("xyz"));
    }
    let len = n.checked_mul(3).ok_or_else(|| invalid("point count overflows"))?;
    let flat = std::slice::from_raw_parts(xyz, len);
    Ok(flat.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
}

unsafe fn copy_points(points: &[Point3<f64>], out: *mut f64, capacity: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    if capacity < points.len() {
        return Err(invalid(format!("buffer holds {capacity} points, need {}", points.len())));
    }
    let dst = std::slice::from_raw_parts_mut(out, points.len() * 3);
    for (d, p) in dst.chunks_exact_mut(3).zip(points) {
        d.copy_from_slice(&[p.x, p.y, p.z]);
    }
    Ok(())
}

fn strategy_of(s: AdStrategy, param: f64) -> AnchorStrategy {
    match s {
        AdStrategy::Fps => AnchorStrategy::Fps,
        AdStrategy::Cluster => AnchorStrategy::Cluster { threshold: param },
        AdStrategy::BallQuery => AnchorStrategy::BallQuery { radius: param },
    }
}

/// Message of the last failed call on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a cloud from `n` packed xyz triples.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_cloud_new(xyz: *const f64, n: usize, out: *mut *mut AdCloud) -> AdStatus {
    guard(|| {
        let cloud = PointCloud::new(points_from(xyz, n)?)?;
        out_arg(out, AdCloud(cloud))
    })
}

/// Loads an XYZ or PLY file, picked by extension.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_cloud_load(path: *const c_char, out: *mut *mut AdCloud) -> AdStatus {
    guard(|| {
        let path = path_arg(path)?;
        let cloud = load_cloud(&path, CloudFormat::from_path(&path))?;
        out_arg(out, AdCloud(cloud))
    })
}

/// # Safety
/// `cloud` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ad_cloud_save(cloud: *const AdCloud, path: *const c_char) -> AdStatus {
    guard(|| {
        let cloud = as_ref(cloud, "cloud")?;
        let path = path_arg(path)?;
        save_cloud(&cloud.0, &path, CloudFormat::from_path(&path))?;
        Ok(())
    })
}

/// Number of points, 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_cloud_len(cloud: *const AdCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the points as packed xyz triples into `out`, which holds
/// `capacity` points.
///
/// # Safety
/// `cloud` must be a live handle and `out` must hold `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ad_cloud_points(cloud: *const AdCloud, out: *mut f64, capacity: usize) -> AdStatus {
    guard(|| copy_points(as_ref(cloud, "cloud")?.0.points(), out, capacity))
}

/// # Safety
/// `cloud` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ad_cloud_free(cloud: *mut AdCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Picks `k` anchors. `param` is ignored for FPS; NaN selects the default
/// radius or threshold.
///
/// # Safety
/// `cloud` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_select_anchors(
    cloud: *const AdCloud,
    k: usize,
    strategy: AdStrategy,
    param: f64,
    out: *mut *mut AdAnchors,
) -> AdStatus {
    guard(|| {
        let cloud = as_ref(cloud, "cloud")?;
        let param = match (strategy, param.is_nan()) {
            (AdStrategy::BallQuery, true) => anchordist::anchors::DEFAULT_BALL_RADIUS,
            (_, true) => anchordist::anchors::DEFAULT_CURVATURE_THRESHOLD,
            (_, false) => param,
        };
        let set = anchordist::select_anchors(&cloud.0, k, strategy_of(strategy, param), &SelectionOptions::default())?;
        out_arg(out, AdAnchors(set))
    })
}

/// # Safety
/// `anchors` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_anchors_len(anchors: *const AdAnchors) -> usize {
    anchors.as_ref().map_or(0, |a| a.0.len())
}

/// # Safety
/// `anchors` must be a live handle and `out` must hold `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ad_anchors_points(anchors: *const AdAnchors, out: *mut f64, capacity: usize) -> AdStatus {
    guard(|| copy_points(&as_ref(anchors, "anchors")?.0.anchors, out, capacity))
}

/// Index of each anchor in the source cloud.
///
/// # Safety
/// `anchors` must be a live handle and `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ad_anchors_indices(anchors: *const AdAnchors, out: *mut usize, capacity: usize) -> AdStatus {
    guard(|| {
        let idx = &as_ref(anchors, "anchors")?.0.source_indices;
        if out.is_null() {
            return Err(null("out"));
        }
        if capacity < idx.len() {
            return Err(invalid(format!("buffer holds {capacity} indices, need {}", idx.len())));
        }
        std::slice::from_raw_parts_mut(out, idx.len()).copy_from_slice(idx);
        Ok(())
    })
}

/// Smallest tie-breaking gap seen during selection. A tiny margin means a
/// rotated copy of the cloud may select different anchors.
///
/// # Safety
/// `anchors` must be a live handle and `margin`/`safe` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn ad_anchors_margin(anchors: *const AdAnchors, margin: *mut f64, safe: *mut bool) -> AdStatus {
    guard(|| {
        let m = as_ref(anchors, "anchors")?.0.margin;
        if !margin.is_null() {
            *margin = m.value();
        }
        if !safe.is_null() {
            *safe = m.is_safe();
        }
        Ok(())
    })
}

/// # Safety
/// `anchors` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ad_anchors_free(anchors: *mut AdAnchors) {
    if !anchors.is_null() {
        drop(Box::from_raw(anchors));
    }
}

/// Distance matrix of `cloud` against the anchor set.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_encode(cloud: *const AdCloud, anchors: *const AdAnchors, out: *mut *mut AdMatrix) -> AdStatus {
    guard(|| {
        let cloud = as_ref(cloud, "cloud")?;
        let anchors = as_ref(anchors, "anchors")?;
        let m = anchordist::encode(&cloud.0, &anchors.0.anchors)?;
        out_arg(out, AdMatrix(m))
    })
}

/// Wraps a row-major `rows × k` distance array with its `k` anchors.
///
/// # Safety
/// `values` must hold `rows * k` doubles, `anchors_xyz` `3 * k` doubles, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_matrix_new(
    values: *const f64,
    rows: usize,
    anchors_xyz: *const f64,
    k: usize,
    out: *mut *mut AdMatrix,
) -> AdStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let len = rows.checked_mul(k).ok_or_else(|| invalid("matrix size overflows"))?;
        let values = std::slice::from_raw_parts(values, len).to_vec();
        let m = DistanceMatrix::new(values, rows, points_from(anchors_xyz, k)?)?;
        out_arg(out, AdMatrix(m))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_matrix_read(path: *const c_char, out: *mut *mut AdMatrix) -> AdStatus {
    guard(|| {
        let m = escd::read_escd(&path_arg(path)?)?;
        out_arg(out, AdMatrix(m))
    })
}

/// # Safety
/// `matrix` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ad_matrix_write(matrix: *const AdMatrix, path: *const c_char) -> AdStatus {
    guard(|| {
        let m = as_ref(matrix, "matrix")?;
        escd::write_escd(&m.0, &path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `matrix` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_matrix_rows(matrix: *const AdMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `matrix` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_matrix_cols(matrix: *const AdMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major values into `out`, which holds `capacity` doubles.
///
/// # Safety
/// `matrix` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ad_matrix_values(matrix: *const AdMatrix, out: *mut f64, capacity: usize) -> AdStatus {
    guard(|| {
        let v = as_ref(matrix, "matrix")?.0.values();
        if out.is_null() {
            return Err(null("out"));
        }
        if capacity < v.len() {
            return Err(invalid(format!("buffer holds {capacity} values, need {}", v.len())));
        }
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(v);
        Ok(())
    })
}

/// # Safety
/// `matrix` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ad_matrix_free(matrix: *mut AdMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

#[no_mangle]
pub extern "C" fn ad_solver_options_default() -> AdSolverOptions {
    let d = SolverOptions::default();
    AdSolverOptions {
        max_iters: d.max_iters,
        residual_tol: d.residual_tol,
        damping_init: d.damping_init,
        damping_scale: d.damping_scale,
        reflection_restarts: d.reflection_restarts,
    }
}

/// Reconstructs one point per matrix row. `opts` may be NULL for defaults.
///
/// Rows that fail to converge still produce a point; they are counted in
/// `failures`. `max_residual` and `failures` may be NULL.
///
/// # Safety
/// `matrix` must be a live handle, `opts` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_decode(
    matrix: *const AdMatrix,
    opts: *const AdSolverOptions,
    out: *mut *mut AdCloud,
    max_residual: *mut f64,
    failures: *mut usize,
) -> AdStatus {
    guard(|| {
        let m = as_ref(matrix, "matrix")?;
        let o = opts.as_ref().copied().unwrap_or_else(|| ad_solver_options_default());
        let solver = SolverOptions {
            max_iters: o.max_iters,
            residual_tol: o.residual_tol,
            damping_init: o.damping_init,
            damping_scale: o.damping_scale,
            reflection_restarts: o.reflection_restarts,
            ..SolverOptions::default()
        };
        let decoded = anchordist::decode(&m.0, &solver)?;
        if !max_residual.is_null() {
            *max_residual = decoded.max_residual();
        }
        if !failures.is_null() {
            *failures = decoded.failures.len();
        }
        out_arg(out, AdCloud(decoded.cloud))
    })
}

/// Symmetric chamfer distance between two matrices' rows.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_dmcd(a: *const AdMatrix, b: *const AdMatrix, out: *mut f64) -> AdStatus {
    guard(|| {
        let v = anchordist::dmcd(&as_ref(a, "a")?.0, &as_ref(b, "b")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

unsafe fn cloud_metric(
    a: *const AdCloud,
    b: *const AdCloud,
    out: *mut f64,
    f: fn(&PointCloud, &PointCloud) -> anchordist::Result<f64>,
) -> AdStatus {
    guard(|| {
        let v = f(&as_ref(a, "a")?.0, &as_ref(b, "b")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Chamfer-L1, scaled by 1000.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_chamfer_l1(a: *const AdCloud, b: *const AdCloud, out: *mut f64) -> AdStatus {
    cloud_metric(a, b, out, anchordist::eval::chamfer_l1)
}

/// Chamfer-L2 (squared distances), scaled by 1000.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_chamfer_l2(a: *const AdCloud, b: *const AdCloud, out: *mut f64) -> AdStatus {
    cloud_metric(a, b, out, anchordist::eval::chamfer_l2)
}

/// One-way squared distance from `input` to `output`, scaled by 1000.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_fidelity(input: *const AdCloud, output: *const AdCloud, out: *mut f64) -> AdStatus {
    cloud_metric(input, output, out, anchordist::eval::fidelity)
}

#[no_mangle]
pub extern "C" fn ad_completion_options_default() -> AdCompletionOptions {
    let d = CompletionConfig::default();
    let (strategy, param) = match d.strategy {
        AnchorStrategy::Fps => (AdStrategy::Fps, f64::NAN),
        AnchorStrategy::Cluster { threshold } => (AdStrategy::Cluster, threshold),
        AnchorStrategy::BallQuery { radius } => (AdStrategy::BallQuery, radius),
    };
    AdCompletionOptions {
        k: d.k,
        n_in: d.n_in,
        m_out: d.m_out,
        strategy,
        strategy_param: param,
        normalize: d.normalize,
        predictor: ptr::null(),
        timeout_seconds: d.timeout.as_secs_f64(),
    }
}

/// Runs the full pipeline on a partial cloud. `opts` may be NULL for
/// defaults; `max_residual` may be NULL.
///
/// # Safety
/// `partial` must be a live handle, `opts` NULL or valid with `predictor`
/// NULL or NUL-terminated, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_complete(
    partial: *const AdCloud,
    opts: *const AdCompletionOptions,
    seed: u64,
    out: *mut *mut AdCloud,
    max_residual: *mut f64,
) -> AdStatus {
    guard(|| {
        let partial = as_ref(partial, "partial")?;
        let o = opts.as_ref().copied().unwrap_or_else(|| ad_completion_options_default());
        let predictor = if o.predictor.is_null() {
            PredictorSpec::Identity
        } else {
            PredictorSpec::External(path_arg(o.predictor)?)
        };
        let timeout = Duration::try_from_secs_f64(o.timeout_seconds)
            .map_err(|_| invalid(format!("bad timeout {}", o.timeout_seconds)))?;
        let config = CompletionConfig {
            k: o.k,
            n_in: o.n_in,
            m_out: o.m_out,
            strategy: strategy_of(o.strategy, o.strategy_param),
            normalize: o.normalize,
            predictor,
            timeout,
            ..CompletionConfig::default()
        };
        let done = anchordist::complete(&partial.0, &config, seed)?;
        if !max_residual.is_null() {
            *max_residual = done.report.max_residual();
        }
        out_arg(out, AdCloud(done.cloud))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_root_error() {
        let e = Error::SolverDiverged { iterations: 3 }.in_stage("decode");
        assert_eq!(status_of(&e), AdStatus::Diverged);
        assert_eq!(status_of(&Error::TooFewAnchors(3)), AdStatus::InvalidArgument);
        assert_eq!(status_of(&Error::BadExternalOutput("x".into())), AdStatus::Predictor);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, AdStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ad_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn interior_nul_does_not_lose_message() {
        set_error("a\0b".into());
        let msg = unsafe { CStr::from_ptr(ad_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "a b");
    }
}
