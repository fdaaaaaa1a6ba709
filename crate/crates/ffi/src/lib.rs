//! C ABI for the toolkit.
//!
//! Handles are opaque: create them with the `pv_*_load`/`pv_*_parse`
//! functions, release them with the matching `pv_*_free`. Every fallible
//! call returns a [`PvStatus`]; when a call fails, the text of the error
//! stays readable through [`pv_last_error_message`] until the next failing
//! call on the same thread.
//!
//! Matrices cross the boundary as row-major `f64` buffers with explicit
//! dimensions, and the caller always owns the memory on both sides.
//!
//! The committed header `include/phenovlp.h` is regenerated by the build
//! script whenever this file changes.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::io::BufReader;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use ndarray::Array2;

use phenovlp::corpus::read_pairs_jsonl;
use phenovlp::eval::recall_report;
use phenovlp::imaging::{gray_to_matrix, load_gray};
use phenovlp::knowledge::knowledge_infonce_loss;
use phenovlp::ontology::{parse_obo, PhenotypeGraph};
use phenovlp::pipeline::{run_pipeline, write_demo_workspace, RunConfig};
use phenovlp::vlp::{lr_schedule, multimodal_contrastive_loss, VlModel};
use phenovlp::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Structural = 3,
    Lookup = 4,
    Parameter = 5,
    Parse = 6,
    Invariant = 7,
    /// A pipeline stage failed; earlier stages are preserved on disk.
    Stage = 8,
    External = 9,
    NonFinite = 10,
    Io = 11,
    Json = 12,
    /// An internal panic was caught at the boundary.
    Panic = 13,
}

fn status_of(e: &Error) -> PvStatus {
    match e {
        Error::Structural(_) => PvStatus::Structural,
        Error::Lookup(_) => PvStatus::Lookup,
        Error::Parameter(_) => PvStatus::Parameter,
        Error::Parse(_) => PvStatus::Parse,
        Error::Invariant(_) => PvStatus::Invariant,
        Error::Stage { .. } => PvStatus::Stage,
        Error::External(_) => PvStatus::External,
        Error::NonFinite(_) => PvStatus::NonFinite,
        Error::Io(_) => PvStatus::Io,
        Error::Json(_) => PvStatus::Json,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("nul bytes stripped"));
}

/// Text of the most recent failure on the calling thread. Never null; the
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Crate version as a static string.
#[no_mangle]
pub extern "C" fn pv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Run `f` with panics caught and errors routed to the thread-local
/// message.
fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> PvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PvStatus::Ok,
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&msg);
            PvStatus::Panic
        }
    }
}

fn null_argument(name: &str) -> PvStatus {
    set_error(&format!("{name} is null"));
    PvStatus::NullArgument
}

/// # Safety: `ptr` must be non-null (checked by the caller via
/// `null_argument`) and point to a nul-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, PvStatus> {
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        PvStatus::InvalidUtf8
    })
}

/// Knowledge graph parsed from an ontology. Opaque.
pub struct PvGraph(PhenotypeGraph);

/// Trained dual encoder loaded from a checkpoint directory. Opaque.
pub struct PvModel(VlModel);

/// Parse an OBO ontology file into a knowledge graph.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer. On
/// success `*out` owns the graph; release it with [`pv_graph_free`].
#[no_mangle]
pub unsafe extern "C" fn pv_graph_parse_obo(
    path: *const c_char,
    out: *mut *mut PvGraph,
) -> PvStatus {
    if path.is_null() {
        return null_argument("path");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let path = match utf8_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    guard(|| {
        let file = std::fs::File::open(Path::new(path))
            .map_err(|e| Error::Lookup(format!("open {path}: {e}")))?;
        let (graph, _) = parse_obo(BufReader::new(file))?;
        *out = Box::into_raw(Box::new(PvGraph(graph)));
        Ok(())
    })
}

/// Load a graph previously written by the build-kg stage (JSONL).
///
/// # Safety
/// Same contract as [`pv_graph_parse_obo`].
#[no_mangle]
pub unsafe extern "C" fn pv_graph_read_jsonl(
    path: *const c_char,
    out: *mut *mut PvGraph,
) -> PvStatus {
    if path.is_null() {
        return null_argument("path");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let path = match utf8_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    guard(|| {
        let file = std::fs::File::open(Path::new(path))
            .map_err(|e| Error::Lookup(format!("open {path}: {e}")))?;
        let graph = PhenotypeGraph::read_jsonl(BufReader::new(file))?;
        *out = Box::into_raw(Box::new(PvGraph(graph)));
        Ok(())
    })
}

/// Number of live terms in the graph.
///
/// # Safety
/// `graph` must come from a `pv_graph_*` constructor and not be freed.
#[no_mangle]
pub unsafe extern "C" fn pv_graph_term_count(
    graph: *const PvGraph,
    out: *mut usize,
) -> PvStatus {
    if graph.is_null() {
        return null_argument("graph");
    }
    if out.is_null() {
        return null_argument("out");
    }
    *out = (*graph).0.term_count();
    PvStatus::Ok
}

/// Release a graph. Null is ignored.
///
/// # Safety
/// `graph` must come from a `pv_graph_*` constructor and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn pv_graph_free(graph: *mut PvGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Load a trained dual encoder from its checkpoint directory.
///
/// # Safety
/// `dir` must be a nul-terminated string and `out` a valid pointer. On
/// success `*out` owns the model; release it with [`pv_model_free`].
#[no_mangle]
pub unsafe extern "C" fn pv_model_load(dir: *const c_char, out: *mut *mut PvModel) -> PvStatus {
    if dir.is_null() {
        return null_argument("dir");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let dir = match utf8_arg(dir, "dir") {
        Ok(d) => d,
        Err(s) => return s,
    };
    guard(|| {
        let model = VlModel::load(Path::new(dir))?;
        *out = Box::into_raw(Box::new(PvModel(model)));
        Ok(())
    })
}

/// Width of the joint embedding space.
///
/// # Safety
/// `model` must come from [`pv_model_load`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn pv_model_joint_dim(model: *const PvModel, out: *mut usize) -> PvStatus {
    if model.is_null() {
        return null_argument("model");
    }
    if out.is_null() {
        return null_argument("out");
    }
    *out = (*model).0.joint_dim();
    PvStatus::Ok
}

/// Side length in pixels the vision tower expects.
///
/// # Safety
/// `model` must come from [`pv_model_load`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn pv_model_image_size(model: *const PvModel, out: *mut usize) -> PvStatus {
    if model.is_null() {
        return null_argument("model");
    }
    if out.is_null() {
        return null_argument("out");
    }
    *out = (*model).0.config().vision.image_size;
    PvStatus::Ok
}

/// Embed `n_texts` nul-terminated strings into `out`, a row-major buffer
/// of `n_texts * joint_dim` doubles. Rows are unit length.
///
/// # Safety
/// `texts` must point to `n_texts` valid strings and `out` to `out_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pv_model_embed_texts(
    model: *const PvModel,
    texts: *const *const c_char,
    n_texts: usize,
    out: *mut f64,
    out_len: usize,
) -> PvStatus {
    if model.is_null() {
        return null_argument("model");
    }
    if texts.is_null() {
        return null_argument("texts");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let model = &(*model).0;
    let mut owned = Vec::with_capacity(n_texts);
    for (i, &ptr) in slice::from_raw_parts(texts, n_texts).iter().enumerate() {
        if ptr.is_null() {
            return null_argument(&format!("texts[{i}]"));
        }
        match utf8_arg(ptr, "text") {
            Ok(s) => owned.push(s.to_string()),
            Err(s) => return s,
        }
    }
    let expected = n_texts * model.joint_dim();
    if out_len != expected {
        set_error(&format!(
            "out_len {out_len} does not match {n_texts} texts x {} dims",
            model.joint_dim()
        ));
        return PvStatus::Parameter;
    }
    let out = slice::from_raw_parts_mut(out, out_len);
    guard(AssertUnwindSafe(|| {
        let embeds = model.embed_texts(&owned);
        out.copy_from_slice(embeds.as_standard_layout().as_slice().expect("contiguous"));
        Ok(())
    }))
}

/// Decode an image file, resize it to the model's input size, and embed
/// it. `out` receives `joint_dim` doubles.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable for
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pv_model_embed_image_file(
    model: *const PvModel,
    path: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> PvStatus {
    if model.is_null() {
        return null_argument("model");
    }
    if path.is_null() {
        return null_argument("path");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let model = &(*model).0;
    let path = match utf8_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    if out_len != model.joint_dim() {
        set_error(&format!("out_len {out_len} does not match {} dims", model.joint_dim()));
        return PvStatus::Parameter;
    }
    let out = slice::from_raw_parts_mut(out, out_len);
    guard(AssertUnwindSafe(|| {
        let image = load_gray(Path::new(path))?;
        let matrix = gray_to_matrix(&image, model.config().vision.image_size);
        let embeds = model.embed_images(&[matrix]);
        out.copy_from_slice(&embeds.row(0).to_vec());
        Ok(())
    }))
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`pv_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pv_model_free(model: *mut PvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Contrastive loss over an interleaved batch of unit-length rows
/// (row 2i and 2i+1 describe the same entity). `embeds` is row-major
/// `n_rows * dim`.
///
/// # Safety
/// `embeds` must point to `n_rows * dim` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pv_knowledge_loss(
    embeds: *const f64,
    n_rows: usize,
    dim: usize,
    tau: f64,
    out: *mut f64,
) -> PvStatus {
    if embeds.is_null() {
        return null_argument("embeds");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let data = slice::from_raw_parts(embeds, n_rows.saturating_mul(dim));
    guard(AssertUnwindSafe(|| {
        let z = Array2::from_shape_vec((n_rows, dim), data.to_vec())
            .map_err(|e| Error::Parameter(format!("bad shape: {e}")))?;
        *out = knowledge_infonce_loss(&z, tau)?;
        Ok(())
    }))
}

/// Bidirectional image-text contrastive loss over aligned unit-length
/// rows. Both buffers are row-major `n * dim`.
///
/// # Safety
/// `image` and `text` must each point to `n * dim` doubles and `out` be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pv_multimodal_loss(
    image: *const f64,
    text: *const f64,
    n: usize,
    dim: usize,
    tau: f64,
    out: *mut f64,
) -> PvStatus {
    if image.is_null() {
        return null_argument("image");
    }
    if text.is_null() {
        return null_argument("text");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let len = n.saturating_mul(dim);
    let v = slice::from_raw_parts(image, len);
    let t = slice::from_raw_parts(text, len);
    guard(AssertUnwindSafe(|| {
        let v = Array2::from_shape_vec((n, dim), v.to_vec())
            .map_err(|e| Error::Parameter(format!("bad shape: {e}")))?;
        let t = Array2::from_shape_vec((n, dim), t.to_vec())
            .map_err(|e| Error::Parameter(format!("bad shape: {e}")))?;
        *out = multimodal_contrastive_loss(&v, &t, tau)?;
        Ok(())
    }))
}

/// Learning rate at `step` of a linear-warmup cosine-decay schedule.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pv_lr_schedule(
    step: u64,
    total_steps: u64,
    warmup_steps: u64,
    base_lr: f64,
    out: *mut f64,
) -> PvStatus {
    if out.is_null() {
        return null_argument("out");
    }
    if total_steps == 0 || warmup_steps > total_steps {
        set_error(&format!(
            "schedule needs 0 < warmup ({warmup_steps}) <= total ({total_steps})"
        ));
        return PvStatus::Parameter;
    }
    *out = lr_schedule(step, total_steps, warmup_steps, base_lr);
    PvStatus::Ok
}

/// Recall@k over a row-major `n x n` similarity matrix where the true
/// match of query `i` is gallery item `i`.
///
/// # Safety
/// `scores` must point to `n * n` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pv_paired_recall_at_k(
    scores: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
) -> PvStatus {
    if scores.is_null() {
        return null_argument("scores");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let data = slice::from_raw_parts(scores, n.saturating_mul(n));
    guard(AssertUnwindSafe(|| {
        let s = Array2::from_shape_vec((n, n), data.to_vec())
            .map_err(|e| Error::Parameter(format!("bad shape: {e}")))?;
        let truth: Vec<std::collections::BTreeSet<usize>> =
            (0..n).map(|i| std::collections::BTreeSet::from([i])).collect();
        let report = recall_report("paired", &s, &truth, &[k], 0)?;
        *out = report.metrics[&format!("R@{k}")];
        Ok(())
    }))
}

/// Number of curated pairs in a JSONL file written by the curate stage.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pv_count_pairs(path: *const c_char, out: *mut usize) -> PvStatus {
    if path.is_null() {
        return null_argument("path");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let path = match utf8_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    guard(AssertUnwindSafe(|| {
        let file = std::fs::File::open(Path::new(path))
            .map_err(|e| Error::Lookup(format!("open {path}: {e}")))?;
        *out = read_pairs_jsonl(BufReader::new(file))?.len();
        Ok(())
    }))
}

/// Run the whole pipeline described by a TOML config into `out_dir`.
/// Stages whose recorded inputs and outputs are unchanged are skipped.
///
/// # Safety
/// Both arguments must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pv_run_pipeline(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> PvStatus {
    if config_path.is_null() {
        return null_argument("config_path");
    }
    if out_dir.is_null() {
        return null_argument("out_dir");
    }
    let config_path = match utf8_arg(config_path, "config_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let out_dir = match utf8_arg(out_dir, "out_dir") {
        Ok(p) => p,
        Err(s) => return s,
    };
    guard(|| {
        let cfg = RunConfig::load(Path::new(config_path))?;
        run_pipeline(&cfg, Path::new(out_dir))?;
        Ok(())
    })
}

/// Write the self-contained demo workspace (toy ontology, rendered
/// corpus, config.toml) under `dir`.
///
/// # Safety
/// `dir` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pv_write_demo_workspace(dir: *const c_char) -> PvStatus {
    if dir.is_null() {
        return null_argument("dir");
    }
    let dir = match utf8_arg(dir, "dir") {
        Ok(d) => d,
        Err(s) => return s,
    };
    guard(|| {
        write_demo_workspace(Path::new(dir))?;
        Ok(())
    })
}
