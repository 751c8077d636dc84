//! C ABI over `clamp-kit`.
//!
//! Handles are opaque pointers created by `ck_*_load`/`ck_*_read` and released
//! with the matching `*_free`. Every fallible call returns a [`CkStatus`];
//! on failure [`ck_last_error`] describes the most recent error on the calling
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use clamp_kit::align::{info_nce, load_checkpoint, CheckpointSet, ContrastiveBatch, ContrastiveConfig, Modality, Similarity};
use clamp_kit::audiofeat::AudioFeatureSequence;
use clamp_kit::eval::{embed_corpus, mrr, random_baseline_mrr, EmbeddingStore, Item, Pairing, RawItem};
use clamp_kit::nn::Matrix;
use clamp_kit::symbolic::segment_abc;
use clamp_kit::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    DimensionMismatch = 4,
    ParseError = 5,
    IoError = 6,
    CorruptFile = 7,
    Divergence = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A loaded checkpoint with all three encoders.
pub struct CkModel {
    ck: CheckpointSet,
}

/// An embedding store.
pub struct CkStore {
    store: EmbeddingStore,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CkStatus {
    match e {
        Error::DimensionMismatch(_) | Error::ShapeMismatch(_) => CkStatus::DimensionMismatch,
        Error::EmptyRecord | Error::InvalidRecord(_) | Error::EmptyDocument | Error::Json(_) => CkStatus::ParseError,
        Error::Io { .. } => CkStatus::IoError,
        Error::NotAFeatureFile | Error::NotAStoreFile | Error::CorruptFile(_) | Error::CorruptCheckpoint(_) => {
            CkStatus::CorruptFile
        }
        Error::Divergence { .. } | Error::NonFinite(_) => CkStatus::Divergence,
        _ => CkStatus::InvalidArgument,
    }
}

struct Fail(CkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CkStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CkStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CkStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ck_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint directory into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ck_model_load(dir: *const c_char, out: *mut *mut CkModel) -> CkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ck = load_checkpoint(Path::new(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(CkModel { ck }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ck_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ck_model_free(model: *mut CkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding length of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ck_model_out_dim(model: *const CkModel) -> usize {
    model.as_ref().map_or(0, |m| m.ck.configs.text.out_dim)
}

unsafe fn embed_one(
    model: *const CkModel,
    modality: Modality,
    raw: RawItem,
    normalize: c_int,
    out: *mut f32,
    out_len: usize,
) -> Result<(), Fail> {
    let m = model.as_ref().ok_or_else(|| null("model"))?;
    let dim = m.ck.configs.get(modality).out_dim;
    if out.is_null() {
        return Err(null("out"));
    }
    if out_len < dim {
        return Err(Fail(CkStatus::BufferTooSmall, format!("need {dim} floats, got {out_len}")));
    }
    let res = embed_corpus(&m.ck, modality, &[Item::new("item", raw)], normalize != 0)?;
    if let Some(f) = res.failures.first() {
        let status = match f.code.as_str() {
            "shape_mismatch" | "dimension_mismatch" => CkStatus::DimensionMismatch,
            "divergence" => CkStatus::Divergence,
            "invalid_argument" => CkStatus::InvalidArgument,
            _ => CkStatus::ParseError,
        };
        return Err(Fail(status, f.message.clone()));
    }
    std::slice::from_raw_parts_mut(out, dim).copy_from_slice(res.store.row(0));
    Ok(())
}

/// Embeds UTF-8 text with the text encoder into `out[0..out_dim]`.
///
/// # Safety
/// `model` must be live, `text` NUL-terminated, `out` valid for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn ck_embed_text(
    model: *const CkModel,
    text: *const c_char,
    normalize: c_int,
    out: *mut f32,
    out_len: usize,
) -> CkStatus {
    guard(|| {
        let s = str_arg(text, "text")?.to_string();
        embed_one(model, Modality::Text, RawItem::Text(s), normalize, out, out_len)
    })
}

/// Embeds an ABC document with the symbolic encoder.
///
/// # Safety
/// As for [`ck_embed_text`].
#[no_mangle]
pub unsafe extern "C" fn ck_embed_abc(
    model: *const CkModel,
    abc: *const c_char,
    normalize: c_int,
    out: *mut f32,
    out_len: usize,
) -> CkStatus {
    guard(|| {
        let s = str_arg(abc, "abc")?.to_string();
        embed_one(model, Modality::Symbolic, RawItem::Abc(s), normalize, out, out_len)
    })
}

/// Embeds an MTF document with the symbolic encoder.
///
/// # Safety
/// As for [`ck_embed_text`].
#[no_mangle]
pub unsafe extern "C" fn ck_embed_mtf(
    model: *const CkModel,
    mtf: *const c_char,
    normalize: c_int,
    out: *mut f32,
    out_len: usize,
) -> CkStatus {
    guard(|| {
        let s = str_arg(mtf, "mtf")?.to_string();
        embed_one(model, Modality::Symbolic, RawItem::Mtf(s), normalize, out, out_len)
    })
}

/// Embeds `rows x cols` row-major clip features with the audio encoder.
///
/// # Safety
/// `features` must hold `rows * cols` floats; otherwise as for [`ck_embed_text`].
#[no_mangle]
pub unsafe extern "C" fn ck_embed_audio(
    model: *const CkModel,
    features: *const f32,
    rows: usize,
    cols: usize,
    normalize: c_int,
    out: *mut f32,
    out_len: usize,
) -> CkStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(CkStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let values = slice_arg(features, n, "features")?.to_vec();
        let seq = AudioFeatureSequence::new(rows, cols, values)?;
        embed_one(model, Modality::Audio, RawItem::Features(seq), normalize, out, out_len)
    })
}

fn similarity(cosine: c_int) -> Similarity {
    if cosine != 0 {
        Similarity::Cosine
    } else {
        Similarity::Dot
    }
}

/// InfoNCE loss of `n` paired rows of width `d` (row `i` of `text` matches row
/// `i` of `music`) at temperature `tau`.
///
/// # Safety
/// `text` and `music` must hold `n * d` floats and `loss_out` be valid.
#[no_mangle]
pub unsafe extern "C" fn ck_info_nce(
    text: *const f32,
    music: *const f32,
    n: usize,
    d: usize,
    tau: f64,
    cosine: c_int,
    symmetric: c_int,
    loss_out: *mut f64,
) -> CkStatus {
    guard(|| {
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Fail(CkStatus::InvalidArgument, "n * d overflows".into()))?;
        let widen = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
        let t = Matrix::from_vec(n, d, widen(slice_arg(text, len, "text")?))?;
        let m = Matrix::from_vec(n, d, widen(slice_arg(music, len, "music")?))?;
        let cfg = ContrastiveConfig {
            similarity: similarity(cosine),
            symmetric: symmetric != 0,
            ..ContrastiveConfig::default()
        };
        let out = info_nce(&ContrastiveBatch::new(t, m)?, tau, &cfg)?;
        *out_arg(loss_out, "loss_out")? = out.loss;
        Ok(())
    })
}

/// Reads a `.cme` embedding store into `*out`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ck_store_read(path: *const c_char, out: *mut *mut CkStore) -> CkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let store = EmbeddingStore::read(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CkStore { store }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`ck_store_read`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ck_store_free(store: *mut CkStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of items, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ck_store_len(store: *const CkStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.len())
}

/// Embedding width, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ck_store_dim(store: *const CkStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.dim())
}

/// MRR of queries against the gallery, pairing items with equal ids.
///
/// # Safety
/// Both handles must be live and `mrr_out` valid.
#[no_mangle]
pub unsafe extern "C" fn ck_mrr(
    queries: *const CkStore,
    gallery: *const CkStore,
    cosine: c_int,
    mrr_out: *mut f64,
) -> CkStatus {
    guard(|| {
        let q = &queries.as_ref().ok_or_else(|| null("queries"))?.store;
        let g = &gallery.as_ref().ok_or_else(|| null("gallery"))?.store;
        let value = mrr(q, g, &Pairing::by_id(q, g), similarity(cosine))?;
        *out_arg(mrr_out, "mrr_out")? = value;
        Ok(())
    })
}

/// Expected MRR of a random ranking over `n` items.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ck_random_baseline_mrr(n: usize, out: *mut f64) -> CkStatus {
    guard(|| {
        let v = random_baseline_mrr(n)?;
        *out_arg(out, "out")? = v;
        Ok(())
    })
}

/// Number of patches the ABC document segments into (before truncation).
///
/// # Safety
/// `abc` must be NUL-terminated and `n_out` valid.
#[no_mangle]
pub unsafe extern "C" fn ck_segment_abc(abc: *const c_char, n_out: *mut usize) -> CkStatus {
    guard(|| {
        let seq = segment_abc(str_arg(abc, "abc")?)?;
        *out_arg(n_out, "n_out")? = seq.len();
        Ok(())
    })
}
