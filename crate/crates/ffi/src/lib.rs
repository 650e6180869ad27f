//! C ABI over the curation core.
//!
//! Conventions:
//! - Every fallible function returns a [`VcStatus`]; on failure a message is
//!   kept per thread and can be read with [`vc_last_error_message`].
//! - Corpora are opaque [`VcCorpus`] handles released with [`vc_corpus_free`].
//! - Strings returned through `char **` out-parameters are owned by the
//!   caller and released with [`vc_string_free`].
//! - Input strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vulncurate::benchmark::{self, BenchmarkError};
use vulncurate::dedup::{dedup_all_stages, overlap_matrix, Stage};
use vulncurate::model::{self, CweId, FunctionPair, PairFields};
use vulncurate::report::{self, DistributionRow};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    BadRatios = 6,
    Empty = 7,
    Panic = 99,
}

/// Opaque collection of function pairs.
pub struct VcCorpus {
    pairs: Vec<FunctionPair>,
}

/// Per-stage counts of one deduplication run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VcDedupCounts {
    pub initial: usize,
    pub complete_pair_removed: usize,
    pub self_identical_removed: usize,
    pub cross_matched_removed: usize,
    pub remaining: usize,
}

/// One review verdict's three criteria.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VcVerdictFlags {
    pub genuine: bool,
    pub self_contained: bool,
    pub cwe_correct: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (VcStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((VcStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (VcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn corpus_arg<'a>(p: *const VcCorpus, name: &str) -> Result<&'a VcCorpus, Failure> {
    p.as_ref().ok_or_else(|| (VcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn put_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err((VcStatus::NullPointer, "output pointer is null".into()));
    }
    let c = CString::new(value).map_err(|_| (VcStatus::InvalidArgument, "result contains NUL".to_string()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_corpus(out: *mut *mut VcCorpus, pairs: Vec<FunctionPair>) -> Result<(), Failure> {
    if out.is_null() {
        return Err((VcStatus::NullPointer, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(VcCorpus { pairs }));
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err((VcStatus::NullPointer, "output pointer is null".into()));
    }
    *out = value;
    Ok(())
}

fn parse_err(e: impl std::fmt::Display) -> Failure {
    (VcStatus::Parse, e.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the calling thread's last error message, or NULL if the last call
/// succeeded. Release with `vc_string_free`.
#[no_mangle]
pub extern "C" fn vc_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn vc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Whitespace-normalized form of `code`.
///
/// # Safety
/// `code` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vc_normalize_code(code: *const c_char, out: *mut *mut c_char) -> VcStatus {
    guard(|| put_string(out, model::normalize_code(str_arg(code, "code")?)))
}

/// Hex SHA-256 record id of a pair.
///
/// # Safety
/// All string arguments must be valid C strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_derive_id(
    source: *const c_char,
    vuln_code: *const c_char,
    fixed_code: *const c_char,
    out: *mut *mut c_char,
) -> VcStatus {
    guard(|| {
        let id = model::derive_id(str_arg(source, "source")?, str_arg(vuln_code, "vuln_code")?, str_arg(fixed_code, "fixed_code")?)
            .map_err(|e| (VcStatus::InvalidArgument, e.to_string()))?;
        put_string(out, id)
    })
}

/// Pair fingerprint rendered `<vuln digest>:<fixed digest>`.
///
/// # Safety
/// All string arguments must be valid C strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_fingerprint(vuln_code: *const c_char, fixed_code: *const c_char, out: *mut *mut c_char) -> VcStatus {
    guard(|| {
        let fp = model::Fingerprint {
            vuln_fp: model::code_digest(str_arg(vuln_code, "vuln_code")?),
            fixed_fp: model::code_digest(str_arg(fixed_code, "fixed_code")?),
        };
        put_string(out, fp.to_hex())
    })
}

/// New empty corpus. Never NULL.
#[no_mangle]
pub extern "C" fn vc_corpus_new() -> *mut VcCorpus {
    Box::into_raw(Box::new(VcCorpus { pairs: Vec::new() }))
}

/// Releases a corpus. NULL is ignored.
///
/// # Safety
/// `corpus` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn vc_corpus_free(corpus: *mut VcCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of pairs in `corpus` (0 for NULL).
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_corpus_len(corpus: *const VcCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.pairs.len())
}

/// Loads a unified JSONL file.
///
/// # Safety
/// `path` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_corpus_read_jsonl(path: *const c_char, out: *mut *mut VcCorpus) -> VcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let pairs = vulncurate::jsonl::read_pairs(Path::new(path)).map_err(|e| match e {
            vulncurate::jsonl::JsonlError::Io { .. } => (VcStatus::Io, e.to_string()),
            other => parse_err(other),
        })?;
        put_corpus(out, pairs)
    })
}

/// Parses unified JSONL held in memory.
///
/// # Safety
/// `text` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_corpus_parse_jsonl(text: *const c_char, out: *mut *mut VcCorpus) -> VcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let p: FunctionPair = serde_json::from_str(line).map_err(|e| parse_err(format!("line {}: {e}", i + 1)))?;
            pairs.push(p);
        }
        put_corpus(out, pairs)
    })
}

/// Writes the corpus as unified JSONL.
///
/// # Safety
/// `corpus` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn vc_corpus_write_jsonl(corpus: *const VcCorpus, path: *const c_char) -> VcStatus {
    guard(|| {
        let c = corpus_arg(corpus, "corpus")?;
        let path = str_arg(path, "path")?;
        vulncurate::jsonl::write_pairs(Path::new(path), &c.pairs).map_err(|e| (VcStatus::Io, e.to_string()))
    })
}

/// Appends a real pair. `cwes` is a comma-separated list or NULL. The new
/// record id is written to `out_id` when it is not NULL.
///
/// # Safety
/// `corpus` must be a live handle; string arguments valid C strings.
#[no_mangle]
pub unsafe extern "C" fn vc_corpus_add_pair(
    corpus: *mut VcCorpus,
    source: *const c_char,
    vuln_code: *const c_char,
    fixed_code: *const c_char,
    cwes: *const c_char,
    out_id: *mut *mut c_char,
) -> VcStatus {
    guard(|| {
        let c = corpus
            .as_mut()
            .ok_or_else(|| (VcStatus::NullPointer, "corpus is null".to_string()))?;
        let labels = if cwes.is_null() {
            Vec::new()
        } else {
            str_arg(cwes, "cwes")?
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<CweId>().map_err(|e| (VcStatus::InvalidArgument, e.to_string())))
                .collect::<Result<_, _>>()?
        };
        let pair = FunctionPair::new(PairFields {
            source: str_arg(source, "source")?.to_string(),
            cwes: labels,
            vuln_code: str_arg(vuln_code, "vuln_code")?.to_string(),
            fixed_code: str_arg(fixed_code, "fixed_code")?.to_string(),
            ..Default::default()
        })
        .map_err(|e| (VcStatus::InvalidArgument, e.to_string()))?;
        let id = pair.id().to_string();
        c.pairs.push(pair);
        if !out_id.is_null() {
            put_string(out_id, id)?;
        }
        Ok(())
    })
}

/// Runs the three deduplication stages. Survivors go to a new corpus in
/// `out`; per-stage counts to `counts` when it is not NULL.
///
/// # Safety
/// `corpus` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_dedup(corpus: *const VcCorpus, out: *mut *mut VcCorpus, counts: *mut VcDedupCounts) -> VcStatus {
    guard(|| {
        let c = corpus_arg(corpus, "corpus")?;
        let (survivors, report) = dedup_all_stages("ffi", c.pairs.clone());
        if !counts.is_null() {
            *counts = VcDedupCounts {
                initial: report.stage(Stage::CompletePair).initial,
                complete_pair_removed: report.stage(Stage::CompletePair).removed,
                self_identical_removed: report.stage(Stage::SelfIdentical).removed,
                cross_matched_removed: report.stage(Stage::CrossMatched).removed,
                remaining: report.stage(Stage::CrossMatched).remaining,
            };
        }
        put_corpus(out, survivors)
    })
}

/// Share of `row`'s distinct pairs also present in `col` (divides by |row|).
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_overlap_fraction(row: *const VcCorpus, col: *const VcCorpus, out: *mut f64) -> VcStatus {
    guard(|| {
        let a = corpus_arg(row, "row")?;
        let b = corpus_arg(col, "col")?;
        let m = overlap_matrix([("row", a.pairs.as_slice()), ("col", b.pairs.as_slice())])
            .map_err(|e| (VcStatus::Empty, e.to_string()))?;
        put(out, m.fraction("row", "col").unwrap_or(0.0))
    })
}

/// Renders `round(max / min)` over positive counts as "N:1".
///
/// # Safety
/// `counts` must point to `len` readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_imbalance_ratio(counts: *const u64, len: usize, out: *mut *mut c_char) -> VcStatus {
    guard(|| {
        if counts.is_null() && len > 0 {
            return Err((VcStatus::NullPointer, "counts is null".into()));
        }
        let values = if len == 0 { &[][..] } else { std::slice::from_raw_parts(counts, len) };
        let rows: Vec<DistributionRow> = values
            .iter()
            .enumerate()
            .map(|(i, &count)| DistributionRow {
                cwe: CweId::new(i as u32 + 1).expect("positive CWE number"),
                count: count as usize,
                top25: false,
                share: 0.0,
            })
            .collect();
        let ratio = report::imbalance_ratio(&rows).map_err(|e| (VcStatus::Empty, e.to_string()))?;
        put_string(out, ratio)
    })
}

/// Fraction of verdicts meeting all three criteria.
///
/// # Safety
/// `verdicts` must point to `len` readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_correctness(verdicts: *const VcVerdictFlags, len: usize, out: *mut f64) -> VcStatus {
    guard(|| {
        if len == 0 {
            return Err((VcStatus::Empty, "no verdicts".into()));
        }
        if verdicts.is_null() {
            return Err((VcStatus::NullPointer, "verdicts is null".into()));
        }
        let v = std::slice::from_raw_parts(verdicts, len);
        let ok = v.iter().filter(|f| f.genuine && f.self_contained && f.cwe_correct).count();
        put(out, ok as f64 / len as f64)
    })
}

/// Stratified split into three new corpora.
///
/// # Safety
/// `corpus` must be a live handle and all out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn vc_split(
    corpus: *const VcCorpus,
    train_ratio: f64,
    validation_ratio: f64,
    test_ratio: f64,
    seed: u64,
    out_train: *mut *mut VcCorpus,
    out_validation: *mut *mut VcCorpus,
    out_test: *mut *mut VcCorpus,
) -> VcStatus {
    guard(|| {
        let c = corpus_arg(corpus, "corpus")?;
        if out_train.is_null() || out_validation.is_null() || out_test.is_null() {
            return Err((VcStatus::NullPointer, "output pointer is null".into()));
        }
        let s = benchmark::split_export(c.pairs.clone(), [train_ratio, validation_ratio, test_ratio], seed).map_err(
            |e| match e {
                BenchmarkError::BadRatios(_) => (VcStatus::BadRatios, e.to_string()),
                other => (VcStatus::InvalidArgument, other.to_string()),
            },
        )?;
        put_corpus(out_train, s.train)?;
        put_corpus(out_validation, s.validation)?;
        put_corpus(out_test, s.test)
    })
}

/// Training pairs whose fingerprint is absent from `benchmark`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_remove_leakage(training: *const VcCorpus, benchmark: *const VcCorpus, out: *mut *mut VcCorpus) -> VcStatus {
    guard(|| {
        let t = corpus_arg(training, "training")?;
        let b = corpus_arg(benchmark, "benchmark")?;
        put_corpus(out, benchmark::remove_leakage(t.pairs.clone(), &b.pairs))
    })
}
