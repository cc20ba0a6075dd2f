//! C ABI over the `cplearn` engine.
//!
//! Every function returns a [`CplStatus`]. On failure the message is kept in
//! a thread-local slot readable with [`cpl_last_error_message`]. Objects are
//! exposed as opaque handles that the caller releases with the matching
//! `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cplearn::diagnostics;
use cplearn::loss;
use cplearn::oracle;
use cplearn::projector;
use cplearn::trainer::{checkpoint, TrainConfig, Trainer};
use cplearn::{Dictionary, Error, LossVariant, Prior, ProbMatrix, Tensor};

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CplStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Data = 7,
    Config = 8,
    Construction = 9,
    DegenerateBatch = 10,
    Internal = 11,
    Panic = 12,
}

/// Prior-term variant of the objective.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CplLossVariant {
    ForwardCe = 0,
    ReverseKl = 1,
}

impl From<CplLossVariant> for LossVariant {
    fn from(v: CplLossVariant) -> Self {
        match v {
            CplLossVariant::ForwardCe => LossVariant::ForwardCe,
            CplLossVariant::ReverseKl => LossVariant::ReverseKl,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CplOrthogonalityStats {
    pub mean_offdiag_cosine: f64,
    pub var_offdiag_cosine: f64,
    pub max_abs_offdiag_cosine: f64,
    pub theoretical_var: f64,
    pub pairs: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CplLossBreakdown {
    pub invariance: f64,
    pub prior_matching: f64,
    pub total: f64,
    pub lower_bound: f64,
    pub certificate_gap: f64,
    pub invariance_floored: bool,
    pub prior_floored: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CplLemma1Summary {
    pub invariance_residual: f64,
    pub extrema_residual: f64,
    pub prior_residual: f64,
    pub min_row_max: f64,
    pub loss_gap: f64,
    pub final_loss: f64,
    pub converged: bool,
    pub cluster_collapse: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CplEpochSummary {
    pub epoch: u64,
    pub steps: usize,
    pub invariance: f64,
    pub prior_matching: f64,
    pub total: f64,
    pub lower_bound: f64,
    pub z_max_abs_mean: f64,
    pub z_max_std: f64,
}

/// Opaque handle to a frozen code dictionary.
pub struct CplDictionary {
    inner: Dictionary,
}

/// Opaque handle to a training session.
pub struct CplTrainer {
    inner: Trainer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: CplStatus,
    message: String,
}

impl Failure {
    fn new(status: CplStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn null(name: &str) -> Self {
        Failure::new(CplStatus::NullPointer, format!("`{name}` is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => CplStatus::ShapeMismatch,
            Error::Param { .. } => CplStatus::InvalidArgument,
            Error::DegenerateBatch(_) => CplStatus::DegenerateBatch,
            Error::Construction(_) => CplStatus::Construction,
            Error::NonFinite(_) => CplStatus::NonFinite,
            Error::TapeConsumed | Error::NotScalar(..) => CplStatus::Internal,
            Error::Data(_) => CplStatus::Data,
            Error::Config { .. } => CplStatus::Config,
            Error::Format(_) => CplStatus::Format,
            Error::Io { .. } => CplStatus::Io,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CplStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CplStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("panic: {msg}"));
            CplStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(name))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(CplStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .ok_or_else(|| Failure::new(CplStatus::InvalidArgument, "rows * cols overflows"))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, name: &str) -> Result<Tensor, Failure> {
    let data = slice(p, checked_len(rows, cols)?, name)?;
    Ok(Tensor::from_vec(rows, cols, data.to_vec())?)
}

unsafe fn prob_matrix(p: *const f64, n: usize, c: usize, name: &str) -> Result<ProbMatrix, Failure> {
    Ok(ProbMatrix::new(matrix(p, n, c, name)?)?)
}

unsafe fn prior(q: *const f64, c: usize) -> Result<Prior, Failure> {
    if q.is_null() {
        Ok(Prior::uniform(c))
    } else {
        Ok(Prior::new(slice(q, c, "prior")?.to_vec())?)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if the last call succeeded.
///
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn cpl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Softmax temperature placing `1 - eps (c-1)` on an aligned code.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn cpl_temperature(
    f: usize,
    n: usize,
    c: usize,
    epsilon: f64,
    out: *mut f64,
) -> CplStatus {
    guard(|| {
        *self::out(out, "out")? = projector::temperature(f, n, c, epsilon)?;
        Ok(())
    })
}

fn boxed<T>(value: T, dst: *mut *mut T) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(Failure::null("out"));
    }
    unsafe { *dst = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Rademacher dictionary with `f` rows and `c` codes.
///
/// # Safety
/// `out` must be null or point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn cpl_dictionary_sample(
    f: usize,
    c: usize,
    seed: u64,
    out: *mut *mut CplDictionary,
) -> CplStatus {
    guard(|| {
        let inner = Dictionary::sample(f, c, seed)?;
        boxed(CplDictionary { inner }, out)
    })
}

/// Sylvester-Hadamard dictionary of order `f` (a power of two).
///
/// # Safety
/// `out` must be null or point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn cpl_dictionary_hadamard(f: usize, out: *mut *mut CplDictionary) -> CplStatus {
    guard(|| {
        let inner = Dictionary::hadamard(f)?;
        boxed(CplDictionary { inner }, out)
    })
}

/// Releases a dictionary. Null is ignored.
///
/// # Safety
/// `dict` must be null or a handle returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpl_dictionary_free(dict: *mut CplDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// # Safety
/// `dict` must be a live handle; `f_out` and `c_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cpl_dictionary_dims(
    dict: *const CplDictionary,
    f_out: *mut usize,
    c_out: *mut usize,
) -> CplStatus {
    guard(|| {
        let d = &handle(dict, "dict")?.inner;
        *out(f_out, "f_out")? = d.f();
        *out(c_out, "c_out")? = d.c();
        Ok(())
    })
}

/// Copies the `f x c` code matrix in row-major order into `buf`.
///
/// # Safety
/// `dict` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cpl_dictionary_codes(
    dict: *const CplDictionary,
    buf: *mut f64,
    len: usize,
) -> CplStatus {
    guard(|| {
        let d = &handle(dict, "dict")?.inner;
        let data = d.codes().data();
        if len != data.len() {
            return Err(Failure::new(
                CplStatus::ShapeMismatch,
                format!("buffer holds {len} values, dictionary has {}", data.len()),
            ));
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(data);
        Ok(())
    })
}

/// # Safety
/// `dict` must be a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cpl_dictionary_cosine_stats(
    dict: *const CplDictionary,
    out_stats: *mut CplOrthogonalityStats,
) -> CplStatus {
    guard(|| {
        let s = handle(dict, "dict")?.inner.cosine_stats()?;
        *out(out_stats, "out")? = CplOrthogonalityStats {
            mean_offdiag_cosine: s.mean_offdiag_cosine,
            var_offdiag_cosine: s.var_offdiag_cosine,
            max_abs_offdiag_cosine: s.max_abs_offdiag_cosine,
            theoretical_var: s.theoretical_var,
            pairs: s.pairs,
        };
        Ok(())
    })
}

/// Objective value for two row-stochastic `n x c` matrices in row-major order.
///
/// A null `prior` means the uniform prior.
///
/// # Safety
/// `p` and `p_prime` must hold `n * c` doubles, `prior` must be null or hold
/// `c` doubles, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpl_loss(
    p: *const f64,
    p_prime: *const f64,
    n: usize,
    c: usize,
    prior_probs: *const f64,
    beta: f64,
    epsilon: f64,
    variant: CplLossVariant,
    out_loss: *mut CplLossBreakdown,
) -> CplStatus {
    guard(|| {
        let p = prob_matrix(p, n, c, "p")?;
        let pp = prob_matrix(p_prime, n, c, "p_prime")?;
        let q = prior(prior_probs, c)?;
        let b = loss::total_loss(&p, &pp, &q, beta, epsilon, variant.into())?;
        *out(out_loss, "out")? = CplLossBreakdown {
            invariance: b.invariance,
            prior_matching: b.prior_matching,
            total: b.total,
            lower_bound: b.lower_bound,
            certificate_gap: b.certificate_gap,
            invariance_floored: b.invariance_floored,
            prior_floored: b.prior_floored,
        };
        Ok(())
    })
}

/// Normalized mutual information of two labelings of length `len`.
///
/// # Safety
/// `a` and `b` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpl_nmi(
    a: *const usize,
    b: *const usize,
    len: usize,
    out_nmi: *mut f64,
) -> CplStatus {
    guard(|| {
        let a = slice(a, len, "a")?;
        let b = slice(b, len, "b")?;
        *out(out_nmi, "out")? = diagnostics::nmi(a, b)?;
        Ok(())
    })
}

/// Optimality residuals of a pair of `n x c` probability matrices.
///
/// When `counts` is non-null it receives the `c` per-code row counts.
///
/// # Safety
/// `p` and `p_prime` must hold `n * c` doubles, `prior` must be null or hold
/// `c` doubles, `counts` must be null or hold `c` values, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpl_check_lemma1(
    p: *const f64,
    p_prime: *const f64,
    n: usize,
    c: usize,
    prior_probs: *const f64,
    epsilon: f64,
    beta: f64,
    variant: CplLossVariant,
    counts: *mut usize,
    out_report: *mut CplLemma1Summary,
) -> CplStatus {
    guard(|| {
        let p = prob_matrix(p, n, c, "p")?;
        let pp = prob_matrix(p_prime, n, c, "p_prime")?;
        let q = prior(prior_probs, c)?;
        let r = oracle::check_lemma1(&p, &pp, &q, epsilon, beta, variant.into())?;
        let dst = out(out_report, "out")?;
        if !counts.is_null() {
            slice_mut(counts, c, "counts")?.copy_from_slice(&r.count_per_code);
        }
        *dst = CplLemma1Summary {
            invariance_residual: r.invariance_residual,
            extrema_residual: r.extrema_residual,
            prior_residual: r.prior_residual,
            min_row_max: r.min_row_max,
            loss_gap: r.loss_gap,
            final_loss: r.final_loss,
            converged: r.converged,
            cluster_collapse: r.cluster_collapse,
        };
        Ok(())
    })
}

/// Training session from a key-value config text, an input width, and a
/// dictionary (copied; the caller keeps ownership).
///
/// # Safety
/// `config_text` must be null or NUL-terminated UTF-8, `dict` a live handle,
/// `out` writable. A null config uses the defaults.
#[no_mangle]
pub unsafe extern "C" fn cpl_trainer_new(
    config_text: *const c_char,
    input_dim: usize,
    dict: *const CplDictionary,
    out: *mut *mut CplTrainer,
) -> CplStatus {
    guard(|| {
        let config = if config_text.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::from_text(text(config_text, "config_text")?, "<config>")?
        };
        let d = handle(dict, "dict")?.inner.clone();
        let inner = Trainer::new(config, input_dim, d)?;
        boxed(CplTrainer { inner }, out)
    })
}

/// Restores a training session from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated UTF-8 and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cpl_trainer_load_checkpoint(
    path: *const c_char,
    out: *mut *mut CplTrainer,
) -> CplStatus {
    guard(|| {
        let inner = checkpoint::load(Path::new(text(path, "path")?))?;
        boxed(CplTrainer { inner }, out)
    })
}

/// One shuffled pass over `rows x cols` row-major data.
///
/// # Safety
/// `trainer` must be a live handle, `data` must hold `rows * cols` doubles,
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cpl_trainer_train_epoch(
    trainer: *mut CplTrainer,
    data: *const f64,
    rows: usize,
    cols: usize,
    out_summary: *mut CplEpochSummary,
) -> CplStatus {
    guard(|| {
        let t = &mut out(trainer, "trainer")?.inner;
        let x = matrix(data, rows, cols, "data")?;
        let s = t.train_epoch(&x, |_| {})?;
        if let Some(dst) = out_summary.as_mut() {
            *dst = CplEpochSummary {
                epoch: s.epoch,
                steps: s.steps,
                invariance: s.invariance,
                prior_matching: s.prior_matching,
                total: s.total,
                lower_bound: s.lower_bound,
                z_max_abs_mean: s.z_max_abs_mean,
                z_max_std: s.z_max_std,
            };
        }
        Ok(())
    })
}

/// Backbone representations of `rows x cols` data, written row-major into
/// `buf` of `rows * f` doubles.
///
/// # Safety
/// `trainer` must be a live handle, `data` must hold `rows * cols` doubles
/// and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cpl_trainer_represent(
    trainer: *const CplTrainer,
    data: *const f64,
    rows: usize,
    cols: usize,
    buf: *mut f64,
    len: usize,
) -> CplStatus {
    guard(|| {
        let t = &handle(trainer, "trainer")?.inner;
        let h = t.represent(&matrix(data, rows, cols, "data")?)?;
        if len != h.len() {
            return Err(Failure::new(
                CplStatus::ShapeMismatch,
                format!("buffer holds {len} values, representation has {}", h.len()),
            ));
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(h.data());
        Ok(())
    })
}

/// Most probable code of every row of `rows x cols` data, written into `codes`.
///
/// # Safety
/// `trainer` must be a live handle, `data` must hold `rows * cols` doubles
/// and `codes` must hold `rows` values.
#[no_mangle]
pub unsafe extern "C" fn cpl_trainer_assign(
    trainer: *const CplTrainer,
    data: *const f64,
    rows: usize,
    cols: usize,
    codes: *mut usize,
) -> CplStatus {
    guard(|| {
        let t = &handle(trainer, "trainer")?.inner;
        let a = t.assign(&matrix(data, rows, cols, "data")?)?;
        slice_mut(codes, rows, "codes")?.copy_from_slice(&a);
        Ok(())
    })
}

/// # Safety
/// `trainer` must be a live handle and `path` NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn cpl_trainer_save_checkpoint(
    trainer: *const CplTrainer,
    path: *const c_char,
) -> CplStatus {
    guard(|| {
        let t = &handle(trainer, "trainer")?.inner;
        checkpoint::save(t, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Releases a training session. Null is ignored.
///
/// # Safety
/// `trainer` must be null or a handle returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpl_trainer_free(trainer: *mut CplTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}
