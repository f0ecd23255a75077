//! C ABI over the toneprobe core.
//!
//! Every function returns a [`TpStatus`]; on failure the message is available
//! from [`tp_last_error_message`] on the same thread. Objects are opaque
//! handles released with their `_free` function. Panics never cross the
//! boundary; they are reported as [`TpStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use toneprobe::corpus::{ToneLabel, ToneToken};
use toneprobe::embstore::{self, EmbeddingFile, Pooled};
use toneprobe::evalreport;
use toneprobe::svm::{self, Matrix, OvrModel, SvmConfig};
use toneprobe::textgrid::{self, TextGrid};

/// Result code of every `tp_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Format = 5,
    Training = 6,
    /// The requested span contains no frame center.
    NoFrames = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

/// Parsed TextGrid.
pub struct TpTextGrid(TextGrid);

/// Embedding file held in memory.
pub struct TpEmbedding(EmbeddingFile);

/// One-vs-rest linear SVM.
pub struct TpSvmModel {
    model: OvrModel,
    class_names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut s = msg.into();
    s.retain(|c| c != '\0');
    let c = CString::new(s).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: TpStatus, msg: impl Into<String>) -> TpStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TpStatus) -> TpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == TpStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TpStatus::Panic, format!("panic: {msg}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(TpStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, TpStatus> {
    if p.is_null() {
        return Err(fail(TpStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TpStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `tp_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a TextGrid (long or short format, UTF-8 or UTF-16 with BOM).
#[no_mangle]
pub unsafe extern "C" fn tp_textgrid_parse(bytes: *const u8, len: usize, out: *mut *mut TpTextGrid) -> TpStatus {
    guard(|| {
        non_null!(bytes, out);
        let data = std::slice::from_raw_parts(bytes, len);
        match textgrid::parse_textgrid(data) {
            Ok(parsed) => {
                *out = Box::into_raw(Box::new(TpTextGrid(parsed.grid)));
                TpStatus::Ok
            }
            Err(e) => fail(TpStatus::Parse, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tp_textgrid_tier_count(grid: *const TpTextGrid, out: *mut usize) -> TpStatus {
    guard(|| {
        non_null!(grid, out);
        *out = (*grid).0.tiers.len();
        TpStatus::Ok
    })
}

/// Number of intervals in the first tier named `tier`.
#[no_mangle]
pub unsafe extern "C" fn tp_textgrid_interval_count(
    grid: *const TpTextGrid,
    tier: *const c_char,
    out: *mut usize,
) -> TpStatus {
    guard(|| {
        non_null!(grid, out);
        let name = match str_arg(tier, "tier") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match (*grid).0.tier_by_name(name) {
            Some(m) => {
                *out = m.tier.intervals.len();
                TpStatus::Ok
            }
            None => fail(TpStatus::InvalidArgument, format!("no tier named `{name}`")),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tp_textgrid_free(grid: *mut TpTextGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Frames whose center lies in `[start, end)`. Writes the first index and
/// one past the last; `NoFrames` when the span holds no frame center.
#[no_mangle]
pub unsafe extern "C" fn tp_frame_range(
    start: f64,
    end: f64,
    stride: f64,
    offset: f64,
    num_frames: usize,
    out_first: *mut usize,
    out_last_exclusive: *mut usize,
) -> TpStatus {
    guard(|| {
        non_null!(out_first, out_last_exclusive);
        if !(stride.is_finite() && stride > 0.0) || !start.is_finite() || !end.is_finite() || !offset.is_finite() {
            return fail(TpStatus::InvalidArgument, "times must be finite and stride > 0");
        }
        match embstore::frame_range_for_segment(start, end, stride, offset, num_frames) {
            Some(r) => {
                *out_first = r.first;
                *out_last_exclusive = r.last_exclusive;
                TpStatus::Ok
            }
            None => fail(TpStatus::NoFrames, "no frame center inside the span"),
        }
    })
}

/// Read a `.tpeb` embedding file.
#[no_mangle]
pub unsafe extern "C" fn tp_embedding_read(path: *const c_char, out: *mut *mut TpEmbedding) -> TpStatus {
    guard(|| {
        non_null!(out);
        let p = match str_arg(path, "path") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match embstore::read_embedding_file(Path::new(p)) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(TpEmbedding(f)));
                TpStatus::Ok
            }
            Err(e @ embstore::EmbError::Io { .. }) => fail(TpStatus::Io, e.to_string()),
            Err(e) => fail(TpStatus::Format, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tp_embedding_dim(emb: *const TpEmbedding, out: *mut usize) -> TpStatus {
    guard(|| {
        non_null!(emb, out);
        *out = (*emb).0.dim;
        TpStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn tp_embedding_num_frames(emb: *const TpEmbedding, out: *mut usize) -> TpStatus {
    guard(|| {
        non_null!(emb, out);
        *out = (*emb).0.num_frames;
        TpStatus::Ok
    })
}

/// Mean of one layer's frames over `[start, end)` into `out` (`out_len`
/// floats, at least the file's dim).
#[no_mangle]
pub unsafe extern "C" fn tp_embedding_pool(
    emb: *const TpEmbedding,
    layer: u32,
    start: f64,
    end: f64,
    out: *mut f32,
    out_len: usize,
) -> TpStatus {
    guard(|| {
        non_null!(emb, out);
        let e = &(*emb).0;
        if out_len < e.dim {
            return fail(
                TpStatus::BufferTooSmall,
                format!("buffer holds {out_len} floats, need {}", e.dim),
            );
        }
        let token = ToneToken {
            token_id: "ffi".into(),
            utterance_id: e.utterance_id.clone(),
            speaker_id: String::new(),
            dialect: String::new(),
            tone: ToneLabel::new(""),
            start,
            end,
        };
        match embstore::pool_token(e, &token, layer) {
            Ok(Pooled::Feature(f)) => {
                std::slice::from_raw_parts_mut(out, e.dim).copy_from_slice(&f.vector);
                TpStatus::Ok
            }
            Ok(Pooled::Dropped(d)) => fail(TpStatus::NoFrames, d.reason),
            Err(err) => fail(TpStatus::InvalidArgument, err.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tp_embedding_free(emb: *mut TpEmbedding) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

unsafe fn matrix_arg(x: *const f64, rows: usize, cols: usize) -> Result<Matrix, TpStatus> {
    if x.is_null() {
        return Err(fail(TpStatus::NullPointer, "`x` is null"));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(TpStatus::InvalidArgument, "matrix size overflows"))?;
    let data = std::slice::from_raw_parts(x, n).to_vec();
    Matrix::new(rows, cols, data).map_err(|e| fail(TpStatus::InvalidArgument, e.to_string()))
}

/// Train a one-vs-rest linear SVM on row-major `x` (`rows` x `cols`) with one
/// NUL-terminated label per row. Classes are the distinct labels in
/// lexicographic order.
#[no_mangle]
pub unsafe extern "C" fn tp_svm_train(
    x: *const f64,
    rows: usize,
    cols: usize,
    labels: *const *const c_char,
    c: f64,
    tolerance: f64,
    max_epochs: usize,
    seed: u64,
    standardize: bool,
    out: *mut *mut TpSvmModel,
) -> TpStatus {
    guard(|| {
        non_null!(labels, out);
        let xm = match matrix_arg(x, rows, cols) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let mut y = Vec::with_capacity(rows);
        for i in 0..rows {
            match str_arg(*labels.add(i), "label") {
                Ok(s) => y.push(s.to_owned()),
                Err(s) => return s,
            }
        }
        let mut classes = y.clone();
        classes.sort();
        classes.dedup();
        let cfg = SvmConfig {
            c,
            tolerance,
            max_epochs,
            seed,
            standardize,
        };
        match svm::train_ovr(&xm, &y, &classes, &cfg) {
            Ok(model) => {
                let class_names = model
                    .classes
                    .iter()
                    .map(|s| CString::new(s.as_str()).unwrap_or_default())
                    .collect();
                *out = Box::into_raw(Box::new(TpSvmModel { model, class_names }));
                TpStatus::Ok
            }
            Err(e) => fail(TpStatus::Training, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tp_svm_class_count(model: *const TpSvmModel, out: *mut usize) -> TpStatus {
    guard(|| {
        non_null!(model, out);
        *out = (*model).class_names.len();
        TpStatus::Ok
    })
}

/// Name of class `index`, owned by the model. Null when out of range.
#[no_mangle]
pub unsafe extern "C" fn tp_svm_class_name(model: *const TpSvmModel, index: usize) -> *const c_char {
    if model.is_null() {
        return ptr::null();
    }
    let m = &*model;
    m.class_names.get(index).map_or(ptr::null(), |s| s.as_ptr())
}

/// Predicted class index for every row of `x` into `out` (`rows` entries).
#[no_mangle]
pub unsafe extern "C" fn tp_svm_predict(
    model: *const TpSvmModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut usize,
) -> TpStatus {
    guard(|| {
        non_null!(model, out);
        let xm = match matrix_arg(x, rows, cols) {
            Ok(m) => m,
            Err(s) => return s,
        };
        match (*model).model.predict_indices(&xm) {
            Ok(idx) => {
                std::slice::from_raw_parts_mut(out, rows).copy_from_slice(&idx);
                TpStatus::Ok
            }
            Err(e) => fail(TpStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tp_svm_free(model: *mut TpSvmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Macro-averaged F1 of integer labels in `0..num_classes`.
#[no_mangle]
pub unsafe extern "C" fn tp_macro_f1(
    truth: *const u32,
    predicted: *const u32,
    n: usize,
    num_classes: usize,
    out: *mut f64,
) -> TpStatus {
    guard(|| {
        non_null!(truth, predicted, out);
        if num_classes == 0 {
            return fail(TpStatus::InvalidArgument, "num_classes must be positive");
        }
        let t = std::slice::from_raw_parts(truth, n);
        let p = std::slice::from_raw_parts(predicted, n);
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&a, &b) in t.iter().zip(p) {
            let (a, b) = (a as usize, b as usize);
            if a >= num_classes || b >= num_classes {
                return fail(
                    TpStatus::InvalidArgument,
                    format!("label out of range 0..{num_classes}"),
                );
            }
            confusion[a][b] += 1;
        }
        *out = evalreport::metrics_from_confusion(confusion).macro_f1;
        TpStatus::Ok
    })
}
