//! C interface to the response engine.
//!
//! Every function returns an [`OptrespStatus`]; results are written through
//! out-pointers. On failure the thread-local message returned by
//! [`optresp_last_error_message`] describes the cause. Engines are opaque
//! handles created by [`optresp_engine_new`] and released by
//! [`optresp_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use optresp::dynamics::make_model;
use optresp::fourier::{hp_norm_sq, int2vec, vec2int, BasisField, BasisLabel, FourierIndex, HpWeighting};
use optresp::{EngineParams, Error, ResponseEngine};

/// Result codes of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptrespStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Invalid configuration, unknown model or inconsistent sizes.
    Config = 3,
    /// Orbit divergence, degenerate frames or a failed shadowing solve.
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Engine construction settings; obtain defaults from [`optresp_engine_params_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OptrespEngineParams {
    pub seg_len: usize,
    pub n_segments: usize,
    pub window: usize,
    pub warmup: usize,
    pub frame_warmup: usize,
    pub seed: u64,
    /// `+1` or `-1`.
    pub unstable_sign: f64,
}

impl From<EngineParams> for OptrespEngineParams {
    fn from(p: EngineParams) -> Self {
        OptrespEngineParams {
            seg_len: p.seg_len,
            n_segments: p.n_segments,
            window: p.window,
            warmup: p.warmup,
            frame_warmup: p.frame_warmup,
            seed: p.seed,
            unstable_sign: p.unstable_sign,
        }
    }
}

impl From<OptrespEngineParams> for EngineParams {
    fn from(p: OptrespEngineParams) -> Self {
        EngineParams {
            seg_len: p.seg_len,
            n_segments: p.n_segments,
            window: p.window,
            warmup: p.warmup,
            frame_warmup: p.frame_warmup,
            seed: p.seed,
            unstable_sign: p.unstable_sign,
        }
    }
}

/// Response of one perturbation with its standard error.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OptrespResponse {
    pub r1: f64,
    pub r2w: f64,
    pub r3w: f64,
    pub total: f64,
    /// Batch-means standard error of `total`.
    pub std_error: f64,
}

/// Opaque engine handle.
pub struct OptrespEngine {
    inner: ResponseEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> OptrespStatus {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::Capability(_) => OptrespStatus::Config,
        _ => OptrespStatus::Numeric,
    }
}

struct Failure(OptrespStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OptrespStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(OptrespStatus::InvalidArgument, message.into())
}

/// Runs `body`, converting failures and panics into a status and a message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> OptrespStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OptrespStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            OptrespStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn engine_ref<'a>(engine: *const OptrespEngine) -> Result<&'a ResponseEngine, Failure> {
    engine.as_ref().map(|e| &e.inner).ok_or_else(|| null("engine"))
}

unsafe fn index_slice<'a>(ptr: *const usize, len: usize) -> Result<&'a [usize], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null("index array"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Copies the last error message of the calling thread into `buf` as a
/// NUL-terminated string, truncating to `len − 1` bytes.
///
/// Returns the full message length excluding the terminator, or 0 when the
/// last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn optresp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn optresp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Default engine settings.
#[no_mangle]
pub extern "C" fn optresp_engine_params_default() -> OptrespEngineParams {
    EngineParams::default().into()
}

/// Builds an engine for a named model (`solenoid2d`, `solenoid3d`, `solenoid21d`).
///
/// # Safety
/// `model` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a handle that must be released with [`optresp_engine_free`].
#[no_mangle]
pub unsafe extern "C" fn optresp_engine_new(
    model: *const c_char,
    params: OptrespEngineParams,
    out: *mut *mut OptrespEngine,
) -> OptrespStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if model.is_null() {
            return Err(null("model"));
        }
        let name = CStr::from_ptr(model)
            .to_str()
            .map_err(|_| invalid("model name is not UTF-8"))?;
        let inner = ResponseEngine::build(make_model(name)?, params.into())?;
        *out = Box::into_raw(Box::new(OptrespEngine { inner }));
        Ok(())
    })
}

/// Releases an engine; null is accepted.
///
/// # Safety
/// `engine` must be null or a handle from [`optresp_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn optresp_engine_free(engine: *mut OptrespEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// State dimension of the engine's model.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn optresp_engine_dim(engine: *const OptrespEngine, out: *mut usize) -> OptrespStatus {
    guard(|| {
        *out_ref(out, "out")? = engine_ref(engine)?.model().dim();
        Ok(())
    })
}

/// Orbit average of the observable over the retained steps.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn optresp_engine_mu_phi(engine: *const OptrespEngine, out: *mut f64) -> OptrespStatus {
    guard(|| {
        *out_ref(out, "out")? = engine_ref(engine)?.mu_phi();
        Ok(())
    })
}

fn write_response(out: &mut OptrespResponse, r: optresp::response::ResponseBreakdown) {
    *out = OptrespResponse {
        r1: r.r1,
        r2w: r.r2w,
        r3w: r.r3w,
        total: r.total,
        std_error: r.stderr,
    };
}

/// Response of the normalized Fourier element with slot `j` (1-based) and
/// multi-index `n[0..n_len]`, in `H^p` with weights `C_l = (2π)^{−2l}`.
///
/// # Safety
/// `engine` must be a live handle, `n` must point to `n_len` values and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn optresp_basis_response(
    engine: *const OptrespEngine,
    j: usize,
    n: *const usize,
    n_len: usize,
    p: usize,
    out: *mut OptrespResponse,
) -> OptrespStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let engine = engine_ref(engine)?;
        let dim = engine.model().dim();
        let n = index_slice(n, n_len)?;
        if n.len() != dim {
            return Err(invalid(format!("index has {} entries, model dimension is {dim}", n.len())));
        }
        if j == 0 || j > dim {
            return Err(invalid(format!("slot j = {j} outside 1..={dim}")));
        }
        let label = BasisLabel::Full(FourierIndex::new(j, n.to_vec()));
        let field = BasisField::new(label, dim, &HpWeighting::two_pi_inverse(p));
        write_response(out, engine.additive_response(&field)?);
        Ok(())
    })
}

/// Response of the normalized restricted element `B̃_n`, whose first two
/// components equal `b_n(x¹)`, in `H^p(ℝ)` with weights `C_l = (2π)^{−2l}`.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn optresp_restricted_response(
    engine: *const OptrespEngine,
    n: usize,
    p: usize,
    out: *mut OptrespResponse,
) -> OptrespStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let engine = engine_ref(engine)?;
        let dim = engine.model().dim();
        if dim < 2 {
            return Err(invalid("the restricted family needs at least two dimensions"));
        }
        let field = BasisField::new(BasisLabel::Restricted(n), dim, &HpWeighting::two_pi_inverse(p));
        write_response(out, engine.additive_response(&field)?);
        Ok(())
    })
}

/// `‖B_n‖²_{H^p}` with weights `C_l = (2π)^{−2l}`.
///
/// # Safety
/// `n` must point to `n_len` values and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn optresp_hp_norm_sq(n: *const usize, n_len: usize, p: usize, out: *mut f64) -> OptrespStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = hp_norm_sq(index_slice(n, n_len)?, &HpWeighting::two_pi_inverse(p));
        Ok(())
    })
}

/// Splits `m` into the leading quotient followed by `n_bits` base-`base`
/// digits; `out` receives `n_bits + 1` values.
///
/// # Safety
/// `out` must point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn optresp_int2vec(
    m: usize,
    base: usize,
    n_bits: usize,
    out: *mut usize,
    out_len: usize,
) -> OptrespStatus {
    guard(|| {
        if base < 2 {
            return Err(invalid("base must be at least 2"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < n_bits + 1 {
            return Err(Failure(
                OptrespStatus::BufferTooSmall,
                format!("output needs {} entries, got {out_len}", n_bits + 1),
            ));
        }
        let digits = int2vec(m, base, n_bits);
        std::slice::from_raw_parts_mut(out, digits.len()).copy_from_slice(&digits);
        Ok(())
    })
}

/// Inverse of [`optresp_int2vec`].
///
/// # Safety
/// `digits` must point to `len` values and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn optresp_vec2int(
    digits: *const usize,
    len: usize,
    base: usize,
    out: *mut usize,
) -> OptrespStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let digits = index_slice(digits, len)?;
        if base < 2 || digits[1.min(digits.len())..].iter().any(|&d| d >= base) {
            return Err(invalid("digits must be below the base, which must be at least 2"));
        }
        *out = vec2int(digits, base);
        Ok(())
    })
}
