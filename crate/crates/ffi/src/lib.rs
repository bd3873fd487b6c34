//! C ABI over `dacomp`.
//!
//! Every function returns a [`DacompStatus`]. On failure the message is kept
//! per thread and read back with [`dacomp_last_error`]. Handles are opaque and
//! must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dacomp::augment::{randaugment, sample_rng, AugPolicy, Image};
use dacomp::models::{Model, ModelSpec};
use dacomp::pruning::{l1_prune, pruning_ratio, PruneState};
use dacomp::tensor::{load_checkpoint, save_checkpoint, Tensor};
use dacomp::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DacompStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Contract = 4,
    Config = 5,
    Transfer = 6,
    Format = 7,
    Numeric = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Opaque model handle.
pub struct DacompModel {
    inner: Model,
}

/// Opaque pruning mask handle.
pub struct DacompPruneState {
    inner: PruneState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DacompStatus {
    match e {
        Error::Dimension(_) => DacompStatus::Dimension,
        Error::Contract(_) => DacompStatus::Contract,
        Error::Config(_) => DacompStatus::Config,
        Error::Transfer { .. } => DacompStatus::Transfer,
        Error::Format { .. } => DacompStatus::Format,
        Error::Numeric(_) => DacompStatus::Numeric,
        Error::Io { .. } => DacompStatus::Io,
    }
}

struct Fail(DacompStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DacompStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DacompStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DacompStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DacompStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DacompStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const DacompModel) -> Result<&'a DacompModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Copies the calling thread's last error message into `buf` (nul-terminated)
/// and stores the full length including the nul in `needed`.
///
/// # Safety
/// `buf` must hold `len` writable bytes or be null with `len == 0`; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn dacomp_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> DacompStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone()).unwrap_or_default();
    let bytes = msg.as_bytes_with_nul();
    if !needed.is_null() {
        *needed = bytes.len();
    }
    if len < bytes.len() || buf.is_null() {
        return DacompStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
    DacompStatus::Ok
}

/// Builds a freshly initialised model from a TOML model description.
///
/// # Safety
/// `spec_toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_new(spec_toml: *const c_char, seed: u64, out: *mut *mut DacompModel) -> DacompStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec: ModelSpec = str_arg(spec_toml, "spec_toml")?.parse()?;
        let inner = Model::build(&spec, seed)?;
        *out = Box::into_raw(Box::new(DacompModel { inner }));
        Ok(())
    })
}

/// Builds a model from a TOML description and loads its weights from a checkpoint.
///
/// # Safety
/// String arguments must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_load(
    spec_toml: *const c_char,
    path: *const c_char,
    out: *mut *mut DacompModel,
) -> DacompStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec: ModelSpec = str_arg(spec_toml, "spec_toml")?.parse()?;
        let params = load_checkpoint(str_arg(path, "path")?)?;
        let inner = Model::from_parts(spec, params)?;
        *out = Box::into_raw(Box::new(DacompModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_free(model: *mut DacompModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_save(model: *const DacompModel, path: *const c_char) -> DacompStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_checkpoint(str_arg(path, "path")?, m.inner.params())?;
        Ok(())
    })
}

/// Number of scalar parameters.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_param_count(model: *const DacompModel, out: *mut usize) -> DacompStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.param_count();
        Ok(())
    })
}

/// Input extents `[channels, height, width]` and class count.
///
/// # Safety
/// `model` must be a live handle; `input_shape` must hold 3 values and `classes` be valid.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_shape(
    model: *const DacompModel,
    input_shape: *mut usize,
    classes: *mut usize,
) -> DacompStatus {
    guard(|| {
        let m = model_ref(model)?;
        if input_shape.is_null() || classes.is_null() {
            return Err(null("output"));
        }
        let spec = m.inner.spec();
        std::slice::from_raw_parts_mut(input_shape, 3).copy_from_slice(&spec.input_shape);
        *classes = spec.num_classes;
        Ok(())
    })
}

/// Logits for `batch` inputs laid out as `[batch, C, H, W]`.
///
/// # Safety
/// `input` must hold `batch * C * H * W` values and `logits` `logits_len` slots.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_forward(
    model: *const DacompModel,
    input: *const f64,
    batch: usize,
    logits: *mut f64,
    logits_len: usize,
) -> DacompStatus {
    guard(|| {
        let m = model_ref(model)?;
        if input.is_null() || logits.is_null() {
            return Err(null("buffer"));
        }
        let [c, h, w] = m.inner.spec().input_shape;
        let classes = m.inner.spec().num_classes;
        if logits_len < batch * classes {
            return Err(Fail(
                DacompStatus::BufferTooSmall,
                format!("logits needs {} slots, got {logits_len}", batch * classes),
            ));
        }
        let data = std::slice::from_raw_parts(input, batch * c * h * w).to_vec();
        let x = Tensor::new(vec![batch, c, h, w], data)?;
        let y = m.inner.logits(&x)?;
        std::slice::from_raw_parts_mut(logits, y.numel()).copy_from_slice(y.data());
        Ok(())
    })
}

/// SHA-256 of all parameters as 64 hex characters plus a nul.
///
/// # Safety
/// `buf` must hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dacomp_model_checksum(model: *const DacompModel, buf: *mut c_char, len: usize) -> DacompStatus {
    guard(|| {
        let m = model_ref(model)?;
        let sum = CString::new(m.inner.checksum()).expect("hex has no nul");
        let bytes = sum.as_bytes_with_nul();
        if buf.is_null() || len < bytes.len() {
            return Err(Fail(DacompStatus::BufferTooSmall, format!("checksum needs {} bytes", bytes.len())));
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        Ok(())
    })
}

/// Magnitude pruning of the model's weights to `ratio`, keeping entries
/// already removed by `prior` (which may be null) removed.
///
/// # Safety
/// `model` must be a live handle, `prior` null or live, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dacomp_l1_prune(
    model: *mut DacompModel,
    ratio: f64,
    prior: *const DacompPruneState,
    out: *mut *mut DacompPruneState,
) -> DacompStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let prior = prior.as_ref().map(|p| &p.inner);
        let inner = l1_prune(&mut m.inner, ratio, prior)?;
        *out = Box::into_raw(Box::new(DacompPruneState { inner }));
        Ok(())
    })
}

/// Achieved fraction of zeroed prunable weights.
///
/// # Safety
/// `state` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dacomp_prune_state_ratio(state: *const DacompPruneState, out: *mut f64) -> DacompStatus {
    guard(|| {
        let s = state.as_ref().ok_or_else(|| null("state"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = pruning_ratio(&s.inner);
        Ok(())
    })
}

/// # Safety
/// `state` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dacomp_prune_state_free(state: *mut DacompPruneState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Applies two random operations at `magnitude` to an interleaved `h x w x c`
/// 8-bit image. The draw is fixed by `(seed, epoch, index)`.
///
/// # Safety
/// `pixels` and `out` must each hold `h * w * c` bytes.
#[no_mangle]
pub unsafe extern "C" fn dacomp_randaugment(
    pixels: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    magnitude: u8,
    seed: u64,
    epoch: u64,
    index: u64,
    out: *mut u8,
) -> DacompStatus {
    guard(|| {
        if pixels.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let n = height * width * channels;
        let img = Image::new(height, width, channels, std::slice::from_raw_parts(pixels, n).to_vec())?;
        let policy = AugPolicy::new(magnitude)?;
        let res = randaugment(&img, policy, &mut sample_rng(seed, epoch, index));
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(res.pixels());
        Ok(())
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dacomp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
