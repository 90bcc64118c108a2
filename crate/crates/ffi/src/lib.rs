//! C ABI over `tlu-core`.
//!
//! Every function returns a [`TluStatus`]; results come back through out
//! pointers. After a non-OK status, [`tlu_last_error`] describes the failure
//! on the calling thread. Handles are opaque and must be released with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ndarray::Array2;
use tlu_core::annotations::{label_distribution, AnnotationMatrix, LabelDistribution, DEFAULT_FRAME_PERIOD};
use tlu_core::bayes_net::{predict_eval, BayesNet, FeatureSequence};
use tlu_core::checkpoint::Checkpoint;
use tlu_core::distributions::{rng_from_seed, student_t_entropy, Gaussian};
use tlu_core::losses::{ccc, kl_gauss_gauss, kl_t_gauss, LabelFrame};
use tlu_core::stats::one_tailed_t_test;
use tlu_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TluStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Domain = 3,
    ShapeMismatch = 4,
    Io = 5,
    Parse = 6,
    Divergence = 7,
    Panic = 8,
}

impl From<&Error> for TluStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain { .. } => TluStatus::Domain,
            Error::InvalidInput(_) => TluStatus::InvalidInput,
            Error::ShapeMismatch { .. } => TluStatus::ShapeMismatch,
            Error::Parse { .. } | Error::Json(_) => TluStatus::Parse,
            Error::Io { .. } => TluStatus::Io,
            Error::Divergence { .. } => TluStatus::Divergence,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tlu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TluStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TluStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            TluStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            TluStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            TluStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// KL divergence from the t label model `(nu, m, s)` to `N(mu_hat, sigma_hat²)`.
///
/// # Safety
/// `result` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn tlu_kl_t_gauss(
    nu: f64,
    m: f64,
    s: f64,
    mu_hat: f64,
    sigma_hat: f64,
    result: *mut f64,
) -> TluStatus {
    guard(|| {
        let r = out(result, "result")?;
        *r = kl_t_gauss(&LabelFrame::new(nu, m, s), &Gaussian::new(mu_hat, sigma_hat)?)?;
        Ok(())
    })
}

/// KL(N(mu, sigma²) ‖ N(mu_hat, sigma_hat²)).
///
/// # Safety
/// `result` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn tlu_kl_gauss_gauss(
    mu: f64,
    sigma: f64,
    mu_hat: f64,
    sigma_hat: f64,
    result: *mut f64,
) -> TluStatus {
    guard(|| {
        let r = out(result, "result")?;
        *r = kl_gauss_gauss(&Gaussian::new(mu, sigma)?, &Gaussian::new(mu_hat, sigma_hat)?);
        Ok(())
    })
}

/// Differential entropy of a location-scale t.
///
/// # Safety
/// `result` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn tlu_student_t_entropy(nu: f64, scale: f64, result: *mut f64) -> TluStatus {
    guard(|| {
        let r = out(result, "result")?;
        *r = student_t_entropy(nu, scale)?;
        Ok(())
    })
}

/// Concordance correlation coefficient of two traces of length `len`.
///
/// # Safety
/// `m` and `m_hat` must point to `len` doubles; `result` to one.
#[no_mangle]
pub unsafe extern "C" fn tlu_ccc(m: *const f64, m_hat: *const f64, len: usize, result: *mut f64) -> TluStatus {
    guard(|| {
        let a = slice(m, len, "m")?;
        let b = slice(m_hat, len, "m_hat")?;
        let r = out(result, "result")?;
        *r = ccc(a, b)?;
        Ok(())
    })
}

/// One-tailed Welch test that `mean(a) > mean(b)`.
///
/// # Safety
/// `a` and `b` must point to `len_a` and `len_b` doubles.
#[no_mangle]
pub unsafe extern "C" fn tlu_one_tailed_t_test(
    a: *const f64,
    len_a: usize,
    b: *const f64,
    len_b: usize,
    p_value: *mut f64,
) -> TluStatus {
    guard(|| {
        let xa = slice(a, len_a, "a")?;
        let xb = slice(b, len_b, "b")?;
        let r = out(p_value, "p_value")?;
        *r = one_tailed_t_test(xa, xb)?;
        Ok(())
    })
}

/// Per-frame t label model built from annotations.
pub struct TluLabelDistribution(LabelDistribution);

/// Builds a label model from a row-major `frames × annotators` grid.
///
/// # Safety
/// `values` must point to `frames * annotators` doubles; `handle` to a
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tlu_label_distribution_from_annotations(
    values: *const f64,
    frames: usize,
    annotators: usize,
    handle: *mut *mut TluLabelDistribution,
) -> TluStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        *h = ptr::null_mut();
        let len = frames
            .checked_mul(annotators)
            .ok_or_else(|| Error::InvalidInput("grid size overflows".into()))?;
        let v = slice(values, len, "values")?;
        let grid = Array2::from_shape_vec((frames, annotators), v.to_vec())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let a = AnnotationMatrix::new(grid, DEFAULT_FRAME_PERIOD, "ffi")?;
        *h = Box::into_raw(Box::new(TluLabelDistribution(label_distribution(&a)?)));
        Ok(())
    })
}

/// Number of frames in a label model, 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tlu_label_distribution_len(handle: *const TluLabelDistribution) -> usize {
    handle.as_ref().map_or(0, |h| h.0.len())
}

/// Copies ν and the `m` and `s` traces; either trace pointer may be NULL.
///
/// # Safety
/// `m` and `s`, when non-NULL, must have room for `len` doubles, where `len`
/// equals [`tlu_label_distribution_len`].
#[no_mangle]
pub unsafe extern "C" fn tlu_label_distribution_get(
    handle: *const TluLabelDistribution,
    nu: *mut f64,
    m: *mut f64,
    s: *mut f64,
    len: usize,
) -> TluStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Fail::Null("handle"))?;
        if len != h.0.len() {
            return Err(Error::ShapeMismatch {
                context: "tlu_label_distribution_get",
                expected: h.0.len().to_string(),
                found: len.to_string(),
            }
            .into());
        }
        if let Some(n) = nu.as_mut() {
            *n = h.0.nu;
        }
        if !m.is_null() {
            slice_mut(m, len, "m")?.copy_from_slice(&h.0.m);
        }
        if !s.is_null() {
            slice_mut(s, len, "s")?.copy_from_slice(&h.0.s);
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tlu_label_distribution_free(handle: *mut TluLabelDistribution) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Bayes-by-Backprop network.
pub struct TluNetwork(BayesNet);

/// Fresh network with layer widths `dims[0..n_dims]` (input first, output 1).
///
/// # Safety
/// `dims` must point to `n_dims` values; `handle` to a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tlu_network_new(
    dims: *const usize,
    n_dims: usize,
    prior_sigma: f64,
    seed: u64,
    handle: *mut *mut TluNetwork,
) -> TluStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        *h = ptr::null_mut();
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        let d = std::slice::from_raw_parts(dims, n_dims);
        let net = BayesNet::new(d, prior_sigma, &mut rng_from_seed(seed))?;
        *h = Box::into_raw(Box::new(TluNetwork(net)));
        Ok(())
    })
}

/// Loads the network stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `handle` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tlu_network_load(path: *const c_char, handle: *mut *mut TluNetwork) -> TluStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        *h = ptr::null_mut();
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidInput("path is not UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(p))?;
        *h = Box::into_raw(Box::new(TluNetwork(ck.net)));
        Ok(())
    })
}

/// Input width of a network, 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tlu_network_input_dim(handle: *const TluNetwork) -> usize {
    handle.as_ref().map_or(0, |h| h.0.input_dim())
}

/// Test-time prediction for a row-major `frames × dim` feature grid: the
/// mean-weight output into `mu_hat`, the spread of `n_passes` sampled passes
/// into `sigma_hat`.
///
/// # Safety
/// `features` must point to `frames * dim` doubles; `mu_hat` and `sigma_hat`
/// to `frames` doubles each.
#[no_mangle]
pub unsafe extern "C" fn tlu_network_predict(
    handle: *const TluNetwork,
    features: *const f64,
    frames: usize,
    dim: usize,
    n_passes: usize,
    seed: u64,
    mu_hat: *mut f64,
    sigma_hat: *mut f64,
) -> TluStatus {
    guard(|| {
        let net = handle.as_ref().ok_or(Fail::Null("handle"))?;
        let len = frames
            .checked_mul(dim)
            .ok_or_else(|| Error::InvalidInput("grid size overflows".into()))?;
        let x = slice(features, len, "features")?;
        let mu_out = slice_mut(mu_hat, frames, "mu_hat")?;
        let sd_out = slice_mut(sigma_hat, frames, "sigma_hat")?;
        let grid = Array2::from_shape_vec((frames, dim), x.to_vec()).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let seq = FeatureSequence::new(grid, DEFAULT_FRAME_PERIOD)?;
        let pred = predict_eval(&net.0, &seq, n_passes, &mut rng_from_seed(seed))?;
        mu_out.copy_from_slice(&pred.mu_hat);
        sd_out.copy_from_slice(&pred.sigma_hat);
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tlu_network_free(handle: *mut TluNetwork) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
