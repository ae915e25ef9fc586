//! C ABI over `unlearn-core`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`UlStatus`] and,
//! on failure, leaves a message retrievable with [`ul_last_error`] on the
//! same thread. Configuration structs are passed as JSON strings; a null
//! pointer selects the defaults.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use unlearn_core::corpus::{
    generate_corpus, load_corpus, save_corpus, train_vanilla, Corpus, CorpusSpec, TrainOptions,
};
use unlearn_core::eval::{full_report, harmonic_success, rouge_l, DomainReport};
use unlearn_core::localize::{localize, FrozenMask};
use unlearn_core::model::{ModelConfig, ModelState};
use unlearn_core::probe::probe_corpus;
use unlearn_core::unlearn::{run_method, Method, MethodContext, UnlearnHyper};
use unlearn_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Runtime = 4,
    Io = 5,
    Panic = 6,
}

pub struct UlCorpus(Corpus);

pub struct UlModel(ModelState);

pub struct UlMask(FrozenMask);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UlDomainReport {
    pub us: f64,
    pub rs: f64,
    pub hs: f64,
    pub ppl_unlearn: f64,
    pub ppl_retain: f64,
    pub rouge_l_unlearn: f64,
    pub rouge_l_retain: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UlReport {
    pub privacy: UlDomainReport,
    pub copyright: UlDomainReport,
    /// NaN when the corpus has no general split.
    pub general_accuracy: f64,
}

impl From<&DomainReport> for UlDomainReport {
    fn from(d: &DomainReport) -> Self {
        UlDomainReport {
            us: d.us,
            rs: d.rs,
            hs: d.hs,
            ppl_unlearn: d.ppl_unlearn,
            ppl_retain: d.ppl_retain,
            rouge_l_unlearn: d.rouge_l_unlearn,
            rouge_l_retain: d.rouge_l_retain,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(UlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => UlStatus::Io,
            e if e.is_validation() => UlStatus::Validation,
            _ => UlStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(UlStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> UlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            UlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or(Failure(UlStatus::NullPointer, "null handle".into()))
}

unsafe fn deref_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or(Failure(UlStatus::NullPointer, "null handle".into()))
}

unsafe fn string<'a>(p: *const c_char) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| invalid("string is not valid UTF-8"))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    string(p)?
        .map(PathBuf::from)
        .ok_or(Failure(UlStatus::NullPointer, "null path".into()))
}

unsafe fn json_or_default<T: serde::de::DeserializeOwned + Default>(
    p: *const c_char,
) -> Result<T, Failure> {
    match string(p)? {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| invalid(format!("bad JSON: {e}"))),
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(UlStatus::NullPointer, "null output pointer".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ul_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `spec_json` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_generate(
    spec_json: *const c_char,
    out: *mut *mut UlCorpus,
) -> UlStatus {
    guard(|| {
        let spec: CorpusSpec = json_or_default(spec_json)?;
        put(out, UlCorpus(generate_corpus(&spec)?))
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_load(path: *const c_char, out: *mut *mut UlCorpus) -> UlStatus {
    guard(|| put(out, UlCorpus(load_corpus(&self::path(path)?)?)))
}

/// # Safety
/// `corpus` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_save(corpus: *const UlCorpus, path: *const c_char) -> UlStatus {
    guard(|| Ok(save_corpus(&deref(corpus)?.0, &self::path(path)?)?))
}

/// Total number of items, or 0 for a null handle.
///
/// # Safety
/// `corpus` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_len(corpus: *const UlCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.items().count())
}

/// # Safety
/// `corpus` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_free(corpus: *mut UlCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// New model. When `corpus` is given, vocabulary size and sequence length are
/// fitted to it.
///
/// # Safety
/// `corpus` is null or a live handle; `config_json` is null or a
/// NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_model_init(
    corpus: *const UlCorpus,
    config_json: *const c_char,
    out: *mut *mut UlModel,
) -> UlStatus {
    guard(|| {
        let mut cfg: ModelConfig = json_or_default(config_json)?;
        if let Some(c) = corpus.as_ref() {
            cfg.vocab_size = c.0.spec.vocab_size;
            cfg.max_seq_len = cfg.max_seq_len.max(c.0.max_item_len());
        }
        put(out, UlModel(ModelState::init(cfg)?))
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_model_load(path: *const c_char, out: *mut *mut UlModel) -> UlStatus {
    guard(|| put(out, UlModel(ModelState::load(&self::path(path)?)?)))
}

/// # Safety
/// `model` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ul_model_save(model: *const UlModel, path: *const c_char) -> UlStatus {
    guard(|| Ok(deref(model)?.0.save(&self::path(path)?)?))
}

/// Deep copy.
///
/// # Safety
/// `model` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_model_clone(model: *const UlModel, out: *mut *mut UlModel) -> UlStatus {
    guard(|| put(out, UlModel(deref(model)?.0.clone())))
}

/// # Safety
/// `model` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_model_num_params(model: *const UlModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_params())
}

/// Writes the 64-character hex fingerprint plus a NUL into `buf`, which
/// must hold at least 65 bytes.
///
/// # Safety
/// `model` is a live handle; `buf` points to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ul_model_fingerprint(
    model: *const UlModel,
    buf: *mut c_char,
    len: usize,
) -> UlStatus {
    guard(|| {
        let fp = deref(model)?.0.fingerprint();
        if buf.is_null() {
            return Err(Failure(UlStatus::NullPointer, "null buffer".into()));
        }
        if len <= fp.len() {
            return Err(invalid(format!(
                "buffer of {len} bytes cannot hold {} + 1",
                fp.len()
            )));
        }
        ptr::copy_nonoverlapping(fp.as_ptr() as *const c_char, buf, fp.len());
        *buf.add(fp.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ul_model_free(model: *mut UlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trains `model` in place; `accuracy` (nullable) receives the final
/// training exact-match fraction.
///
/// # Safety
/// Handles are live; `options_json` is null or a NUL-terminated string;
/// `accuracy` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn ul_train_vanilla(
    model: *mut UlModel,
    corpus: *const UlCorpus,
    options_json: *const c_char,
    accuracy: *mut f64,
) -> UlStatus {
    guard(|| {
        let opts: TrainOptions = json_or_default(options_json)?;
        let m = deref_mut(model)?;
        let c = deref(corpus)?;
        let outcome = train_vanilla(m.0.clone(), &c.0, &opts)?;
        m.0 = outcome.model;
        if let Some(a) = accuracy.as_mut() {
            *a = outcome.accuracy;
        }
        Ok(())
    })
}

/// Probes the four core datasets and builds the frozen mask.
///
/// # Safety
/// Handles are live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_localize(
    model: *const UlModel,
    corpus: *const UlCorpus,
    trials: usize,
    seed: u64,
    k_op_ur: f64,
    k_op_rr: f64,
    out: *mut *mut UlMask,
) -> UlStatus {
    guard(|| {
        let summaries = probe_corpus(&deref(model)?.0, &deref(corpus)?.0, trials, seed)?;
        put(out, UlMask(localize(&summaries, k_op_ur, k_op_rr)?))
    })
}

/// Mask restricted to the chosen components.
///
/// # Safety
/// `mask` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_mask_ablate(
    mask: *const UlMask,
    keep_op_ur: bool,
    keep_op_rr: bool,
    out: *mut *mut UlMask,
) -> UlStatus {
    guard(|| put(out, UlMask(deref(mask)?.0.ablate(keep_op_ur, keep_op_rr))))
}

/// # Safety
/// `mask` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_mask_frozen_count(mask: *const UlMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.frozen.count())
}

/// # Safety
/// `mask` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ul_mask_free(mask: *mut UlMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Runs the method named `method` (e.g. `"grail"`, `"ga_gd_id"`) and
/// replaces `model` with the result. `mask` is required for `grail` only.
/// `epochs` (nullable) receives the number of epochs run.
///
/// # Safety
/// `model` and `corpus` are live handles; `mask` is null or live; strings
/// are null (where allowed) or NUL-terminated; `epochs` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn ul_unlearn(
    model: *mut UlModel,
    corpus: *const UlCorpus,
    method: *const c_char,
    mask: *const UlMask,
    hyper_json: *const c_char,
    epochs: *mut usize,
) -> UlStatus {
    guard(|| {
        let method: Method = string(method)?
            .ok_or(Failure(UlStatus::NullPointer, "null method".into()))?
            .parse()?;
        let hyper: UnlearnHyper = json_or_default(hyper_json)?;
        let m = deref_mut(model)?;
        let c = deref(corpus)?;
        let mask = mask.as_ref().map(|k| &k.0);
        let reference = m.0.clone();
        let ctx = MethodContext {
            mask,
            summaries: None,
            reference: Some(&reference),
        };
        let (next, record) = run_method(method, m.0.clone(), &c.0, ctx, &hyper)?;
        m.0 = next;
        if let Some(e) = epochs.as_mut() {
            *e = record.epochs_run();
        }
        Ok(())
    })
}

/// # Safety
/// Handles are live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_evaluate(
    model: *const UlModel,
    corpus: *const UlCorpus,
    out: *mut UlReport,
) -> UlStatus {
    guard(|| {
        let r = full_report(&deref(model)?.0, &deref(corpus)?.0, "ffi", 0)?;
        let out = deref_mut(out)?;
        *out = UlReport {
            privacy: (&r.privacy).into(),
            copyright: (&r.copyright).into(),
            general_accuracy: r.general_accuracy.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_harmonic_success(us: f64, rs: f64, out: *mut f64) -> UlStatus {
    guard(|| {
        *deref_mut(out)? = harmonic_success(us, rs)?;
        Ok(())
    })
}

/// # Safety
/// `candidate` and `reference` point to `n_candidate` / `n_reference`
/// tokens; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ul_rouge_l(
    candidate: *const u32,
    n_candidate: usize,
    reference: *const u32,
    n_reference: usize,
    out: *mut f64,
) -> UlStatus {
    guard(|| {
        if candidate.is_null() || reference.is_null() {
            return Err(Failure(UlStatus::NullPointer, "null token array".into()));
        }
        let c = std::slice::from_raw_parts(candidate, n_candidate);
        let r = std::slice::from_raw_parts(reference, n_reference);
        *deref_mut(out)? = rouge_l(c, r)?;
        Ok(())
    })
}
