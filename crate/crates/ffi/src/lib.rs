//! C interface to the molcf classifier, feasibility check and run
//! evaluation.
//!
//! Every function returns a `MolcfStatus`. On failure the message is kept
//! per thread and can be read with `molcf_last_error`. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use molcf::chem::{is_feasible, parse_smiles, MolecularGraph};
use molcf::models::gtgnn::GtGnn;
use molcf::pipeline::{run, PipelineError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MolcfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// SMILES could not be read.
    Parse = 3,
    Io = 4,
    /// Model load or inference failed.
    Model = 5,
    /// An expected input file or directory is absent.
    Missing = 6,
    Panic = 7,
}

/// Trained graph classifier.
pub struct MolcfGtgnn {
    model: GtGnn,
}

/// Seed-aggregated metrics of a run directory. Proximity fields are NaN
/// when undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MolcfSummary {
    pub runs: u32,
    pub validity_mean: f64,
    pub validity_std: f64,
    pub validity_feasible_mean: f64,
    pub validity_feasible_std: f64,
    pub proximity_mean: f64,
    pub proximity_feasible_mean: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

struct Fail(MolcfStatus, String);

impl From<PipelineError> for Fail {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Missing { .. } => MolcfStatus::Missing,
            PipelineError::Io { .. } => MolcfStatus::Io,
            _ => MolcfStatus::Model,
        };
        Fail(code, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MolcfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MolcfStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            MolcfStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(MolcfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(MolcfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: non-null out-pointers are required to be valid and writable.
    unsafe { p.as_mut() }.ok_or_else(|| Fail(MolcfStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn molcf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn molcf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a classifier checkpoint written by `molcf train-gtgnn`.
///
/// # Safety
/// `path` is a NUL-terminated string; `handle` is writable.
#[no_mangle]
pub unsafe extern "C" fn molcf_gtgnn_load(path: *const c_char, handle: *mut *mut MolcfGtgnn) -> MolcfStatus {
    guard(|| {
        let path = text(path, "path")?;
        let slot = out(handle, "handle")?;
        *slot = std::ptr::null_mut();
        if !Path::new(path).exists() {
            return Err(Fail(MolcfStatus::Missing, format!("no checkpoint at {path}")));
        }
        let model = GtGnn::load(Path::new(path)).map_err(|e| Fail(MolcfStatus::Model, e.to_string()))?;
        *slot = Box::into_raw(Box::new(MolcfGtgnn { model }));
        Ok(())
    })
}

/// Classifies a molecule: `label` gets 0 or 1, `prob_positive` the class-1
/// probability.
///
/// # Safety
/// `handle` comes from `molcf_gtgnn_load`; `smiles` is NUL-terminated; the
/// out-pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn molcf_gtgnn_predict(
    handle: *const MolcfGtgnn,
    smiles: *const c_char,
    label: *mut u8,
    prob_positive: *mut f64,
) -> MolcfStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| Fail(MolcfStatus::NullPointer, "handle is null".into()))?;
        let smiles = text(smiles, "smiles")?;
        let (label, prob) = (out(label, "label")?, out(prob_positive, "prob_positive")?);
        let g = MolecularGraph::from_smiles(smiles, 0).map_err(|e| Fail(MolcfStatus::Parse, e.to_string()))?;
        let p = h.model.predict(&g).map_err(|e| Fail(MolcfStatus::Model, e.to_string()))?;
        *label = p.label;
        *prob = p.prob_desired;
        Ok(())
    })
}

/// Graph embedding width of the classifier.
///
/// # Safety
/// `handle` comes from `molcf_gtgnn_load`.
#[no_mangle]
pub unsafe extern "C" fn molcf_gtgnn_embed_dim(handle: *const MolcfGtgnn, dim: *mut usize) -> MolcfStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| Fail(MolcfStatus::NullPointer, "handle is null".into()))?;
        *out(dim, "dim")? = h.model.embed_dim();
        Ok(())
    })
}

/// Releases a classifier. Null is ignored.
///
/// # Safety
/// `handle` comes from `molcf_gtgnn_load` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn molcf_gtgnn_free(handle: *mut MolcfGtgnn) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Writes 1 to `feasible` when the molecule passes sanitization, else 0.
///
/// # Safety
/// `smiles` is NUL-terminated; `feasible` is writable.
#[no_mangle]
pub unsafe extern "C" fn molcf_smiles_is_feasible(smiles: *const c_char, feasible: *mut u8) -> MolcfStatus {
    guard(|| {
        let smiles = text(smiles, "smiles")?;
        let slot = out(feasible, "feasible")?;
        let mol = parse_smiles(smiles).map_err(|e| Fail(MolcfStatus::Parse, e.to_string()))?;
        *slot = u8::from(is_feasible(&mol));
        Ok(())
    })
}

/// Scores every seed of a run directory, rewriting its report files, and
/// fills `summary`.
///
/// # Safety
/// `run_dir` is NUL-terminated; `summary` is writable.
#[no_mangle]
pub unsafe extern "C" fn molcf_evaluate_run(run_dir: *const c_char, summary: *mut MolcfSummary) -> MolcfStatus {
    guard(|| {
        let dir = text(run_dir, "run_dir")?;
        let slot = out(summary, "summary")?;
        let (_, s) = run::evaluate(Path::new(dir))?;
        *slot = MolcfSummary {
            runs: s.runs as u32,
            validity_mean: s.validity_nofeas.mean,
            validity_std: s.validity_nofeas.std,
            validity_feasible_mean: s.validity_feas.mean,
            validity_feasible_std: s.validity_feas.std,
            proximity_mean: s.proximity_nofeas.map_or(f64::NAN, |m| m.mean),
            proximity_feasible_mean: s.proximity_feas.map_or(f64::NAN, |m| m.mean),
        };
        Ok(())
    })
}
