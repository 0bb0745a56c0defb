//! C ABI over the xlzero library.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`XlzStatus`]; on failure, [`xlz_last_error`] describes the most recent
//! error on the calling thread. Strings returned through out-parameters are
//! owned by the caller and released with [`xlz_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use xlzero::corpus::{DialogueExample, LanguageTag, Limits};
use xlzero::generator::{generate, GenerationConfig, IdentityFiller};
use xlzero::lexicon::{load_lexicon, BilingualLexicon};
use xlzero::metrics::bleu;
use xlzero::model::Seq2Seq;
use xlzero::switcher::{build_views, view_records, SwitchConfig};
use xlzero::tokenizer::{split_text, MASK};
use xlzero::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XlzStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Config = 4,
    /// Degenerate input such as an empty batch.
    Degenerate = 5,
    Shape = 6,
    Compatibility = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
    Internal = 9,
}

/// Bilingual lexicon handle.
pub struct XlzLexicon(BilingualLexicon);

/// Trained model handle. Read-only; safe to share across threads.
pub struct XlzModel(Seq2Seq);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> XlzStatus {
    match err {
        Error::Io { .. } => XlzStatus::Io,
        Error::Parse { .. } | Error::EmptyCorpus(_) | Error::Json(_) => XlzStatus::Parse,
        Error::Config(_) => XlzStatus::Config,
        Error::Degenerate(_) => XlzStatus::Degenerate,
        Error::Shape(_) | Error::Length { .. } | Error::DoubleTag(_) => XlzStatus::Shape,
        Error::Compatibility(_) => XlzStatus::Compatibility,
        _ => XlzStatus::Internal,
    }
}

struct Fail(XlzStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(XlzStatus::InvalidArgument, msg.into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> XlzStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => XlzStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            XlzStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn tag(p: *const c_char, what: &str) -> Result<LanguageTag, Fail> {
    text(p, what)?.parse().map_err(|e: String| invalid(e))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(XlzStatus::Internal, "string contains a NUL byte".into()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn xlz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn xlz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn xlz_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a `source target` per line lexicon. Tags accept `en` or `<En>`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xlz_lexicon_load(
    path: *const c_char,
    source: *const c_char,
    target: *const c_char,
    out: *mut *mut XlzLexicon,
) -> XlzStatus {
    guard(|| {
        let path = text(path, "path")?;
        let lex = load_lexicon(Path::new(path), tag(source, "source")?, tag(target, "target")?)?;
        put(out, Box::into_raw(Box::new(XlzLexicon(lex))), "out")
    })
}

/// Number of source entries, or 0 for null.
///
/// # Safety
/// `lex` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn xlz_lexicon_len(lex: *const XlzLexicon) -> usize {
    lex.as_ref().map_or(0, |l| l.0.len())
}

/// # Safety
/// `lex` must be null or a handle from [`xlz_lexicon_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn xlz_lexicon_free(lex: *mut XlzLexicon) {
    if !lex.is_null() {
        drop(Box::from_raw(lex));
    }
}

/// Builds the source, pseudo-target and code-switched views of one dialogue
/// and returns them as JSON lines in `out_json`. History turns are separated
/// by newlines.
///
/// # Safety
/// `lex` must be a live handle; strings NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn xlz_build_views(
    lex: *const XlzLexicon,
    id: *const c_char,
    history: *const c_char,
    response: *const c_char,
    source: *const c_char,
    k: u32,
    tau: f64,
    seed: u64,
    out_json: *mut *mut c_char,
) -> XlzStatus {
    guard(|| {
        let lex = lex.as_ref().ok_or_else(|| invalid("lexicon is null"))?;
        let turns: Vec<&str> = text(history, "history")?.lines().collect();
        let ex = DialogueExample::from_turns(
            text(id, "id")?,
            &turns,
            text(response, "response")?,
            tag(source, "source")?,
            Limits::default(),
        )
        .map_err(invalid)?;
        let cfg = SwitchConfig {
            k: k as usize,
            tau,
            seed,
            ..SwitchConfig::default()
        };
        let set = build_views(&ex, &lex.0, &cfg)?;
        let mut s = String::new();
        for rec in view_records(&ex.id, &set) {
            s.push_str(&serde_json::to_string(&rec).map_err(Error::from)?);
            s.push('\n');
        }
        put(out_json, owned_string(s)?, "out_json")
    })
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn xlz_model_load(dir: *const c_char, out: *mut *mut XlzModel) -> XlzStatus {
    guard(|| {
        let model = Seq2Seq::load(Path::new(text(dir, "dir")?))?;
        put(out, Box::into_raw(Box::new(XlzModel(model))), "out")
    })
}

/// Vocabulary size, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn xlz_model_vocab_size(model: *const XlzModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.vocab().len())
}

/// # Safety
/// `model` must be null or a handle from [`xlz_model_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn xlz_model_free(model: *mut XlzModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Beam-search response to a history (turns separated by newlines), decoded
/// under `tag`. Placeholders are left in place. `out_json` receives one
/// generation record.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn xlz_generate(
    model: *const XlzModel,
    history: *const c_char,
    decode_tag: *const c_char,
    beam_size: u32,
    max_len: u32,
    out_json: *mut *mut c_char,
) -> XlzStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        let t = tag(decode_tag, "tag")?;
        let mut hist = Vec::new();
        for (i, turn) in text(history, "history")?.lines().enumerate() {
            if i > 0 {
                hist.push(xlzero::tokenizer::TURN.to_string());
            }
            hist.extend(split_text(turn));
        }
        if hist.is_empty() {
            return Err(invalid("history is empty"));
        }
        let ex = DialogueExample {
            id: "ffi".into(),
            history: hist,
            response: Vec::new(),
            language_tag: t,
        };
        let cfg = GenerationConfig {
            beam_size: beam_size as usize,
            max_len: max_len as usize,
            ..GenerationConfig::default()
        };
        let rec = generate(&model.0, &[ex], t, &cfg, &IdentityFiller, MASK)?;
        let json = serde_json::to_string(&rec[0]).map_err(Error::from)?;
        put(out_json, owned_string(json)?, "out_json")
    })
}

/// Corpus BLEU up to `max_n` over `n` whitespace-tokenized candidate and
/// reference strings.
///
/// # Safety
/// `candidates` and `references` must point to `n` NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xlz_bleu(
    candidates: *const *const c_char,
    references: *const *const c_char,
    n: usize,
    max_n: u32,
    smoothing: bool,
    out: *mut f64,
) -> XlzStatus {
    guard(|| {
        if candidates.is_null() || references.is_null() {
            return Err(invalid("string arrays must not be null"));
        }
        let read = |arr: *const *const c_char| -> Result<Vec<Vec<String>>, Fail> {
            (0..n)
                .map(|i| Ok(text(*arr.add(i), "sentence")?.split_whitespace().map(str::to_string).collect()))
                .collect()
        };
        let score = bleu(&read(candidates)?, &read(references)?, max_n as usize, smoothing)?;
        put(out, score, "out")
    })
}
