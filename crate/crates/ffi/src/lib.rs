//! C ABI over `bfreg-core`: opaque handles, integer status codes and a
//! thread-local last-error message. The header is generated into
//! `include/bfreg.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use bfreg_core::knowledge::{load_knowledge, KnowledgeBase};
use bfreg_core::model::{BfregModel as CoreModel, ModelConfig};
use bfreg_core::numerics::Matrix;
use bfreg_core::rng::BfRng;
use bfreg_core::synth::{gen_knowledge, SynthSpec};
use bfreg_core::Error;

/// Status returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BfregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Config = 5,
    Knowledge = 6,
    Diverged = 7,
    Checkpoint = 8,
    NonFinite = 9,
    Utf8 = 10,
    Internal = 11,
}

/// A loaded knowledge base.
pub struct BfregKnowledge {
    kb: Arc<KnowledgeBase>,
}

/// A model bound to a knowledge base.
pub struct BfregModel {
    model: CoreModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BfregStatus {
    match e {
        Error::Shape(_) => BfregStatus::Shape,
        Error::NonFinite(_) => BfregStatus::NonFinite,
        Error::Io { .. } => BfregStatus::Io,
        Error::Config(_) | Error::UnsupportedPrimitive(_) => BfregStatus::Config,
        Error::Knowledge(_)
        | Error::UnknownLevel(_)
        | Error::UnknownNode { .. }
        | Error::UnresolvedNode { .. }
        | Error::Parse { .. } => BfregStatus::Knowledge,
        Error::Diverged(_) => BfregStatus::Diverged,
        Error::Checkpoint(_) | Error::Serde(_) => BfregStatus::Checkpoint,
        _ => BfregStatus::InvalidArgument,
    }
}

struct Fail(BfregStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BfregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BfregStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BfregStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(BfregStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(BfregStatus::Utf8, format!("`{what}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bfreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the calling thread's last error message, excluding the terminator.
#[no_mangle]
pub extern "C" fn bfreg_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message (NUL-terminated, truncated to fit) into
/// `buf` of capacity `len`. Returns the number of bytes written before the terminator.
///
/// # Safety
/// `buf` must be valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn bfreg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
        n
    })
}

/// Loads a knowledge manifest.
///
/// # Safety
/// `manifest` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bfreg_knowledge_load(manifest: *const c_char, out: *mut *mut BfregKnowledge) -> BfregStatus {
    guard(|| {
        let path = str_arg(manifest, "manifest")?;
        let out = out_arg(out, "out")?;
        let kb = load_knowledge(Path::new(path))?;
        *out = Box::into_raw(Box::new(BfregKnowledge { kb: Arc::new(kb) }));
        Ok(())
    })
}

/// Builds a synthetic gene-only knowledge base with `genes` nodes.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bfreg_knowledge_synthetic(
    genes: usize,
    edge_prob: f64,
    seed: u64,
    out: *mut *mut BfregKnowledge,
) -> BfregStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = SynthSpec {
            genes,
            edge_prob,
            seed,
            ..SynthSpec::default()
        };
        let kb = gen_knowledge(&spec)?;
        *out = Box::into_raw(Box::new(BfregKnowledge { kb: Arc::new(kb) }));
        Ok(())
    })
}

/// Number of genes (bottom-level nodes).
///
/// # Safety
/// `kb` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfreg_knowledge_gene_count(kb: *const BfregKnowledge, out: *mut usize) -> BfregStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| null("kb"))?;
        *out_arg(out, "out")? = kb.kb.gene_count();
        Ok(())
    })
}

/// Number of levels.
///
/// # Safety
/// `kb` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfreg_knowledge_level_count(kb: *const BfregKnowledge, out: *mut usize) -> BfregStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| null("kb"))?;
        *out_arg(out, "out")? = kb.kb.levels().len();
        Ok(())
    })
}

/// Releases a knowledge handle; null is ignored.
///
/// # Safety
/// `kb` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bfreg_knowledge_free(kb: *mut BfregKnowledge) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Creates a model over `kb` from a JSON model config (null for defaults).
///
/// # Safety
/// `kb` must come from this library; `config_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bfreg_model_new(
    kb: *const BfregKnowledge,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut BfregModel,
) -> BfregStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| null("kb"))?;
        let out = out_arg(out, "out")?;
        let cfg: ModelConfig = if config_json.is_null() {
            ModelConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Fail(BfregStatus::Config, format!("model config: {e}")))?
        };
        let model = CoreModel::new(cfg, Arc::clone(&kb.kb), &mut BfRng::new(seed))?;
        *out = Box::into_raw(Box::new(BfregModel { model }));
        Ok(())
    })
}

/// Restores a checkpoint written by `bfreg_model_save` against `kb`.
///
/// # Safety
/// `path` NUL-terminated; `kb` from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bfreg_model_load(
    path: *const c_char,
    kb: *const BfregKnowledge,
    out: *mut *mut BfregModel,
) -> BfregStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let kb = kb.as_ref().ok_or_else(|| null("kb"))?;
        let out = out_arg(out, "out")?;
        let model = CoreModel::load(Path::new(path), Arc::clone(&kb.kb))?;
        *out = Box::into_raw(Box::new(BfregModel { model }));
        Ok(())
    })
}

/// Writes a checkpoint.
///
/// # Safety
/// `model` from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bfreg_model_save(model: *const BfregModel, path: *const c_char) -> BfregStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = str_arg(path, "path")?;
        m.model.save(Path::new(path))?;
        Ok(())
    })
}

/// Width of one prediction row.
///
/// # Safety
/// `model` from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bfreg_model_output_width(model: *const BfregModel, out: *mut usize) -> BfregStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = m.model.config().head_output;
        Ok(())
    })
}

/// Evaluation-mode forward pass. `x` is `samples × genes` row-major; `out`
/// receives `samples × output_width` values and `out_len` must equal that.
///
/// # Safety
/// `x` valid for `samples * genes` reads, `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn bfreg_model_predict(
    model: *const BfregModel,
    x: *const f64,
    samples: usize,
    genes: usize,
    out: *mut f64,
    out_len: usize,
) -> BfregStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if genes != m.model.gene_count() {
            return Err(Fail(
                BfregStatus::Shape,
                format!("{genes} input genes for a model over {}", m.model.gene_count()),
            ));
        }
        let width = m.model.config().head_output;
        if out_len != samples * width {
            return Err(Fail(
                BfregStatus::Shape,
                format!("output buffer of {out_len} for {samples}x{width} predictions"),
            ));
        }
        let input = Matrix::new(samples, genes, std::slice::from_raw_parts(x, samples * genes).to_vec())?;
        let pred = m.model.predict(&input)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(pred.data());
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bfreg_model_free(model: *mut BfregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs a CLI task (`impute`, `classify`, `forecast`, `trajectory`,
/// `discover`, `synth`, `validate`) with a config file, writing into `out_dir`
/// (null for the configured directory).
///
/// # Safety
/// String arguments must be NUL-terminated; `out_dir` may be null.
#[no_mangle]
pub unsafe extern "C" fn bfreg_run(task: *const c_char, config: *const c_char, out_dir: *const c_char) -> BfregStatus {
    guard(|| {
        let task = str_arg(task, "task")?;
        let config = str_arg(config, "config")?;
        let mut args = vec!["bfreg".to_string(), task.to_string(), "--config".into(), config.to_string()];
        if !out_dir.is_null() {
            args.push("--out".into());
            args.push(str_arg(out_dir, "out_dir")?.to_string());
        }
        bfreg_core::cli::run(args)?;
        Ok(())
    })
}
