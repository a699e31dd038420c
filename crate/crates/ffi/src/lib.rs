//! C ABI over the eegspeech library.
//!
//! Every function returns an [`EsStatus`]; on failure the message is
//! available from [`es_last_error`] on the calling thread. Objects are
//! opaque handles created by `*_new`/`*_fit`/`*_load` functions and released
//! with the matching `*_free`. Matrices are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use eegspeech::ctc::{beam_search_decode, ctc_loss_indices, Alphabet};
use eegspeech::features::window_stats;
use eegspeech::kpca::{fit_kpca, KpcaModel};
use eegspeech::lm::{train_ngram, CharNGramModel};
use eegspeech::metrics::wer;
use eegspeech::nn::{Mode, Model, Tensor};
use eegspeech::signal::{design_bandpass, design_notch, frequency_response, magnitude_db, IirFilter};
use eegspeech::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NotFound = 4,
    InvalidState = 5,
    RankDeficient = 6,
    UndefinedMetric = 7,
    ParseError = 8,
    MissingPrerequisite = 9,
    IoError = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Character n-gram language model.
pub struct EsLanguageModel {
    inner: CharNGramModel,
}

/// Fitted kernel PCA.
pub struct EsKpca {
    inner: KpcaModel,
}

/// Cascade of second-order IIR sections.
pub struct EsFilter {
    inner: IirFilter,
}

/// Sequence network loaded from a checkpoint.
pub struct EsModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> EsStatus {
    match e {
        Error::Param(_) => EsStatus::InvalidArgument,
        Error::Shape(_) => EsStatus::ShapeMismatch,
        Error::Lookup { .. } => EsStatus::NotFound,
        Error::State(_) => EsStatus::InvalidState,
        Error::Rank { .. } => EsStatus::RankDeficient,
        Error::UndefinedMetric(_) => EsStatus::UndefinedMetric,
        Error::Parse { .. } | Error::Line { .. } => EsStatus::ParseError,
        Error::Missing(_) => EsStatus::MissingPrerequisite,
        Error::Io(_) => EsStatus::IoError,
    }
}

struct Failure(EsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: EsStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard<F>(f: F) -> EsStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(EsStatus::NullPointer, format!("{name} is null"));
    }
    Ok(())
}

unsafe fn doubles<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn doubles_mut<'a>(p: *mut f64, n: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(EsStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn texts<'a>(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<&'a str>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    non_null(p, name)?;
    slice::from_raw_parts(p, n).iter().map(|s| text(*s, name)).collect()
}

unsafe fn rows(p: *const f64, n_rows: usize, n_cols: usize, name: &str) -> Result<Vec<Vec<f64>>, Failure> {
    let data = doubles(p, n_rows * n_cols, name)?;
    Ok(if n_cols == 0 {
        vec![Vec::new(); n_rows]
    } else {
        data.chunks(n_cols).map(<[f64]>::to_vec).collect()
    })
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    non_null(out, "output handle")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    non_null(p, name)?;
    Ok(&*p)
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    non_null(out, name)?;
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn es_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Size of the default CTC output layer (28 characters + blank).
#[no_mangle]
pub extern "C" fn es_alphabet_symbols() -> usize {
    Alphabet::default().n_symbols()
}

/// Trains a character n-gram model over the default alphabet.
///
/// # Safety
/// `sentences` must point to `n` valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_lm_train(
    sentences: *const *const c_char,
    n: usize,
    order: usize,
    k: f64,
    out: *mut *mut EsLanguageModel,
) -> EsStatus {
    guard(|| {
        let corpus = texts(sentences, n, "sentences")?;
        let inner = train_ngram(&corpus, order, k, &Alphabet::default())?;
        store(out, EsLanguageModel { inner })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_lm_load(path: *const c_char, out: *mut *mut EsLanguageModel) -> EsStatus {
    guard(|| {
        let inner = CharNGramModel::load(Path::new(text(path, "path")?))?;
        store(out, EsLanguageModel { inner })
    })
}

/// # Safety
/// `lm` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn es_lm_save(lm: *const EsLanguageModel, path: *const c_char) -> EsStatus {
    guard(|| {
        handle(lm, "lm")?.inner.save(Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Natural-log probability of `next` (a Unicode scalar) after `context`.
///
/// # Safety
/// `lm` must be a live handle; `context` a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_lm_logprob(
    lm: *const EsLanguageModel,
    context: *const c_char,
    next: u32,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let c = char::from_u32(next).map_or_else(|| fail(EsStatus::InvalidArgument, "invalid character"), Ok)?;
        let v = handle(lm, "lm")?.inner.next_char_logprob(text(context, "context")?, c)?;
        write_out(out, v, "out")
    })
}

/// # Safety
/// `lm` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_lm_free(lm: *mut EsLanguageModel) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Fits kernel PCA (cubic polynomial kernel) on `rows x cols` data.
///
/// # Safety
/// `x` must hold `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_kpca_fit(
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    n_components: usize,
    gamma: f64,
    coef0: f64,
    out: *mut *mut EsKpca,
) -> EsStatus {
    guard(|| {
        let data = rows(x, n_rows, n_cols, "x")?;
        let inner = fit_kpca(&data, n_components, gamma, coef0)?;
        store(out, EsKpca { inner })
    })
}

/// Projects `rows x cols` queries into `out` (`rows x n_components`).
///
/// # Safety
/// `k` must be live; `x` must hold `rows * cols` doubles; `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_kpca_transform(
    k: *const EsKpca,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
    out_len: usize,
) -> EsStatus {
    guard(|| {
        let model = &handle(k, "kpca")?.inner;
        let need = n_rows * model.n_components();
        if out_len < need {
            return fail(EsStatus::BufferTooSmall, format!("output needs {need} doubles, got {out_len}"));
        }
        let projected = model.transform(&rows(x, n_rows, n_cols, "x")?)?;
        let dst = doubles_mut(out, need, "out")?;
        for (d, v) in dst.iter_mut().zip(projected.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `k` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_kpca_n_components(k: *const EsKpca, out: *mut usize) -> EsStatus {
    guard(|| write_out(out, handle(k, "kpca")?.inner.n_components(), "out"))
}

/// Cumulative explained-variance ratios; `*written` receives the usable rank.
///
/// # Safety
/// `k` must be live; `out` must hold `out_len` doubles; `written` writable.
#[no_mangle]
pub unsafe extern "C" fn es_kpca_explained_variance(
    k: *const EsKpca,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> EsStatus {
    guard(|| {
        let v = handle(k, "kpca")?.inner.explained_variance();
        write_out(written, v.len(), "written")?;
        if out_len < v.len() {
            return fail(EsStatus::BufferTooSmall, format!("output needs {} doubles", v.len()));
        }
        doubles_mut(out, v.len(), "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// # Safety
/// `k` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_kpca_free(k: *mut EsKpca) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Butterworth bandpass of total order `order`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_filter_bandpass(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    sample_rate_hz: f64,
    out: *mut *mut EsFilter,
) -> EsStatus {
    guard(|| {
        let inner = design_bandpass(low_hz, high_hz, order, sample_rate_hz)?;
        store(out, EsFilter { inner })
    })
}

/// Second-order notch at `f0_hz` with quality factor `q`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_filter_notch(f0_hz: f64, q: f64, sample_rate_hz: f64, out: *mut *mut EsFilter) -> EsStatus {
    guard(|| {
        let inner = design_notch(f0_hz, q, sample_rate_hz)?;
        store(out, EsFilter { inner })
    })
}

/// Filters `n` samples from zero initial state into `output`.
///
/// # Safety
/// `f` must be live; `input` and `output` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_filter_apply(f: *const EsFilter, input: *const f64, n: usize, output: *mut f64) -> EsStatus {
    guard(|| {
        let y = handle(f, "filter")?.inner.filter_channel(doubles(input, n, "input")?);
        doubles_mut(output, n, "output")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Analytic gain in decibels at `freq_hz`.
///
/// # Safety
/// `f` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_filter_gain_db(f: *const EsFilter, freq_hz: f64, out: *mut f64) -> EsStatus {
    guard(|| {
        let h = frequency_response(&handle(f, "filter")?.inner, freq_hz)?;
        write_out(out, magnitude_db(h), "out")
    })
}

/// # Safety
/// `f` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_filter_free(f: *mut EsFilter) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_model_load(path: *const c_char, out: *mut *mut EsModel) -> EsStatus {
    guard(|| {
        let c = eegspeech::io::Checkpoint::load(Path::new(text(path, "path")?))?;
        store(out, EsModel { inner: Model::from_checkpoint(&c)? })
    })
}

/// Input and output widths of a model.
///
/// # Safety
/// `m` must be live; `d_in` and `d_out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_model_dims(m: *const EsModel, d_in: *mut usize, d_out: *mut usize) -> EsStatus {
    guard(|| {
        let model = &handle(m, "model")?.inner;
        write_out(d_in, model.input_dim().unwrap_or(0), "d_in")?;
        write_out(d_out, model.output_dim().unwrap_or(0), "d_out")
    })
}

/// Inference pass over a `frames x d_in` sequence into `frames x d_out`.
///
/// # Safety
/// `m` must be live and not used concurrently; `x` must hold
/// `frames * d_in` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_model_forward(
    m: *mut EsModel,
    x: *const f64,
    frames: usize,
    d_in: usize,
    out: *mut f64,
    out_len: usize,
) -> EsStatus {
    guard(|| {
        non_null(m, "model")?;
        let model = &mut (*m).inner;
        let input = Tensor::matrix(frames, d_in, doubles(x, frames * d_in, "x")?.to_vec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = model.forward(&input, Mode::Infer, &mut rng)?;
        if out_len < y.len() {
            return fail(EsStatus::BufferTooSmall, format!("output needs {} doubles", y.len()));
        }
        doubles_mut(out, y.len(), "out")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_model_free(m: *mut EsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// CTC negative log-likelihood of `label` under `frames x symbols`
/// log-probabilities; `grad` (nullable) receives the logit gradient.
/// Infeasible labels give `+inf` and a zero gradient.
///
/// # Safety
/// `log_probs` must hold `frames * symbols` doubles, `label` `label_len`
/// indices, `grad` (when non-null) `frames * symbols` doubles, `loss` writable.
#[no_mangle]
pub unsafe extern "C" fn es_ctc_loss(
    log_probs: *const f64,
    frames: usize,
    symbols: usize,
    label: *const usize,
    label_len: usize,
    blank: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> EsStatus {
    guard(|| {
        let lp = Tensor::matrix(frames, symbols, doubles(log_probs, frames * symbols, "log_probs")?.to_vec())?;
        let label = if label_len == 0 {
            &[][..]
        } else {
            non_null(label, "label")?;
            slice::from_raw_parts(label, label_len)
        };
        let r = ctc_loss_indices(&lp, label, blank)?;
        write_out(loss, r.loss, "loss")?;
        if !grad.is_null() {
            doubles_mut(grad, frames * symbols, "grad")?.copy_from_slice(r.grad.data());
        }
        Ok(())
    })
}

/// Prefix beam search over the default alphabet (`symbols` must equal
/// [`es_alphabet_symbols`]) with optional shallow fusion. Writes a
/// NUL-terminated UTF-8 transcript; `*written` receives its byte length
/// without the terminator, also when the buffer is too small.
///
/// # Safety
/// `log_probs` must hold `frames * symbols` doubles; `lm` null or live;
/// `buf` must hold `buf_len` bytes; `written` writable.
#[no_mangle]
pub unsafe extern "C" fn es_ctc_decode(
    log_probs: *const f64,
    frames: usize,
    symbols: usize,
    beam_width: usize,
    lm: *const EsLanguageModel,
    lm_weight: f64,
    buf: *mut c_char,
    buf_len: usize,
    written: *mut usize,
) -> EsStatus {
    guard(|| {
        let lp = Tensor::matrix(frames, symbols, doubles(log_probs, frames * symbols, "log_probs")?.to_vec())?;
        let lm = if lm.is_null() { None } else { Some(&(*lm).inner) };
        let s = beam_search_decode(&lp, &Alphabet::default(), beam_width, lm, lm_weight)?;
        write_out(written, s.len(), "written")?;
        if buf_len < s.len() + 1 {
            return fail(EsStatus::BufferTooSmall, format!("transcript needs {} bytes", s.len() + 1));
        }
        non_null(buf, "buf")?;
        let dst = slice::from_raw_parts_mut(buf.cast::<u8>(), s.len() + 1);
        dst[..s.len()].copy_from_slice(s.as_bytes());
        dst[s.len()] = 0;
        Ok(())
    })
}

/// Corpus word error rate in percent.
///
/// # Safety
/// `references` and `hypotheses` must each point to `n` NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_wer(
    references: *const *const c_char,
    hypotheses: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let refs = texts(references, n, "references")?;
        let hyps = texts(hypotheses, n, "hypotheses")?;
        write_out(out, wer(&refs, &hyps)?, "out")
    })
}

/// Five window statistics: RMS, zero-crossing rate, mean window amplitude,
/// kurtosis and normalized power spectral entropy, in that order.
///
/// # Safety
/// `window` must hold `n` doubles; `out` must hold 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn es_window_stats(window: *const f64, n: usize, sample_rate_hz: f64, out: *mut f64) -> EsStatus {
    guard(|| {
        let st = window_stats(doubles(window, n, "window")?, sample_rate_hz)?;
        doubles_mut(out, 5, "out")?.copy_from_slice(&st.to_array());
        Ok(())
    })
}
