//! C ABI for loading a trained checkpoint, running prediction and computing
//! the evaluation metrics.
//!
//! Every function returns an [`MdnStatus`]. On failure a message is
//! available from [`mdn_last_error_message`] on the same thread. Arrays
//! are passed as pointer plus element count; motions are flattened
//! `[frames][joints][3]` in millimeters.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mdn_motion::checkpoint::Checkpoint;
use mdn_motion::losses::log_sum_exp;
use mdn_motion::metrics::{apd, mpjpe_best};
use mdn_motion::model::{predict, Model, Motion3D, Pose2D};
use mdn_motion::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque handle to a loaded model.
pub struct MdnModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> MdnStatus {
    match err {
        Error::Config(_) | Error::Argument(_) => MdnStatus::InvalidArgument,
        Error::Dimension { .. } => MdnStatus::DimensionMismatch,
        Error::Numeric { .. } => MdnStatus::Numeric,
        Error::Parse { .. } => MdnStatus::Parse,
        Error::Io { .. } => MdnStatus::Io,
    }
}

struct Fail(MdnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MdnStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> MdnStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MdnStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MdnStatus::Panic
        }
    }
}

/// # Safety
/// `data` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// `data` must be null or point to `len` writable values.
unsafe fn slice_mut<'a, T>(data: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

fn expect_len(what: &'static str, expected: usize, actual: usize) -> Result<(), Fail> {
    if expected != actual {
        return Err(Error::dim(what, expected, actual).into());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mdn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn mdn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint file. On success `*out` owns a handle that must be
/// released with [`mdn_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdn_model_load(path: *const c_char, out: *mut *mut MdnModel) -> MdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(MdnStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let model = Checkpoint::load(path)?.model;
        *out = Box::into_raw(Box::new(MdnModel { model }));
        Ok(())
    })
}

/// Releases a handle from [`mdn_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mdn_model_free(model: *mut MdnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the joint count, frame count and number of hypotheses.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdn_model_dims(
    model: *const MdnModel,
    joints: *mut usize,
    frames: *mut usize,
    components: *mut usize,
) -> MdnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if joints.is_null() || frames.is_null() || components.is_null() {
            return Err(null("output pointer"));
        }
        let cfg = &model.model.cfg;
        *joints = cfg.joints;
        *frames = cfg.frames;
        *components = cfg.components;
        Ok(())
    })
}

/// Predicts from a root-centered 2D pose of `2 * joints` values.
/// `hypotheses` receives `components * frames * joints * 3` values and
/// `alphas` receives `components` mixture weights.
///
/// # Safety
/// Each pointer must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn mdn_model_predict(
    model: *const MdnModel,
    pose: *const f64,
    pose_len: usize,
    hypotheses: *mut f64,
    hypotheses_len: usize,
    alphas: *mut f64,
    alphas_len: usize,
) -> MdnStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let cfg = &model.cfg;
        let d = 3 * cfg.frames * cfg.joints;
        expect_len("pose length", 2 * cfg.joints, pose_len)?;
        expect_len("hypotheses length", cfg.components * d, hypotheses_len)?;
        expect_len("alphas length", cfg.components, alphas_len)?;
        let pose = Pose2D::from_flat(slice(pose, pose_len, "pose")?)?;
        let hyp_out = slice_mut(hypotheses, hypotheses_len, "hypotheses")?;
        let alpha_out = slice_mut(alphas, alphas_len, "alphas")?;
        let (hyps, weights) = predict(&pose, model)?;
        for (chunk, h) in hyp_out.chunks_exact_mut(d).zip(&hyps) {
            chunk.copy_from_slice(h.as_slice());
        }
        alpha_out.copy_from_slice(&weights);
        Ok(())
    })
}

/// Numerically stable `log Σ exp(q_i)`.
///
/// # Safety
/// `q` must reference `len` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdn_log_sum_exp(q: *const f64, len: usize, out: *mut f64) -> MdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = log_sum_exp(slice(q, len, "q")?)?;
        Ok(())
    })
}

unsafe fn motions(data: *const f64, count: usize, frames: usize, joints: usize) -> Result<Vec<Motion3D>, Fail> {
    if frames == 0 || joints == 0 {
        return Err(Fail(MdnStatus::InvalidArgument, "frames and joints must be positive".into()));
    }
    let d = 3 * frames * joints;
    let values = slice(data, count * d, "motion data")?;
    Ok(values
        .chunks_exact(d)
        .map(|c| Motion3D::new(frames, joints, c.to_vec()))
        .collect::<Result<_, _>>()?)
}

/// Best-of-M MPJPE. `hypotheses` holds `count` motions and `target` one
/// motion, each `frames * joints * 3` values.
///
/// # Safety
/// Pointers must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn mdn_mpjpe_best(
    hypotheses: *const f64,
    count: usize,
    target: *const f64,
    frames: usize,
    joints: usize,
    error: *mut f64,
    index: *mut usize,
) -> MdnStatus {
    guard(|| {
        if error.is_null() || index.is_null() {
            return Err(null("output pointer"));
        }
        let hyps = motions(hypotheses, count, frames, joints)?;
        let y = motions(target, 1, frames, joints)?.remove(0);
        let (e, i) = mpjpe_best(&hyps, &y)?;
        *error = e;
        *index = i;
        Ok(())
    })
}

/// Average pairwise distance between `count` hypotheses.
///
/// # Safety
/// Pointers must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn mdn_apd(
    hypotheses: *const f64,
    count: usize,
    frames: usize,
    joints: usize,
    out: *mut f64,
) -> MdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = apd(&motions(hypotheses, count, frames, joints)?);
        Ok(())
    })
}
