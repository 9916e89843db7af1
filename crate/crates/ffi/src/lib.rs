//! C ABI over the resprop toolkit.
//!
//! Conventions: every object crosses the boundary as an opaque handle owned
//! by Rust and released through its `_free` function; fallible calls return
//! an error code (`RESPROP_OK` = 0) and leave a message retrievable with
//! [`resprop_last_error`]; strings returned to the caller are NUL-terminated
//! and released with [`resprop_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use resprop::graph::{homophily_ratio, load_graph, parse_graph_text, perturb_edges, save_graph};
use resprop::operator::{normalize_adjacency, PropagationOperator};
use resprop::pipeline::{run_training, ExperimentConfig};
use resprop::spectral::{spectral_clip, PowerIterConfig};
use resprop::SparseGraph;

/// Status codes returned by fallible functions.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum RespropStatus {
    Ok = 0,
    /// Invalid argument, parse failure, or unusable configuration.
    Usage = 1,
    /// A numerical contract was violated (non-finite loss, broken
    /// contraction guarantee).
    Contract = 2,
    /// Filesystem or serialization failure.
    Io = 3,
    /// A required pointer was NULL.
    NullPointer = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &resprop::Error) -> RespropStatus {
    match err.exit_code() {
        2 => RespropStatus::Contract,
        _ => match err {
            resprop::Error::Io(_) | resprop::Error::Json(_) => RespropStatus::Io,
            _ => RespropStatus::Usage,
        },
    }
}

fn fail(err: &resprop::Error) -> RespropStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Message for the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn resprop_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Crate version as a static string.
#[no_mangle]
pub extern "C" fn resprop_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a resprop function documented to allocate,
/// and must not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn resprop_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opaque sparse graph handle.
pub struct RespropGraph(SparseGraph);

/// Opaque propagation-operator handle.
pub struct RespropOperator(PropagationOperator);

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Load a graph from the text format. On success stores the new handle in
/// `out` and returns `RESPROP_STATUS_OK`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
/// pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_from_file(
    path: *const c_char,
    out: *mut *mut RespropGraph,
) -> RespropStatus {
    let (Some(path), false) = (cstr_arg(path), out.is_null()) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    match load_graph(&PathBuf::from(path)) {
        Ok(g) => {
            *out = Box::into_raw(Box::new(RespropGraph(g)));
            RespropStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Parse a graph from an in-memory text-format string.
///
/// # Safety
/// `text` must be NUL-terminated UTF-8; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_from_text(
    text: *const c_char,
    out: *mut *mut RespropGraph,
) -> RespropStatus {
    let (Some(text), false) = (cstr_arg(text), out.is_null()) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    match parse_graph_text(text) {
        Ok(g) => {
            *out = Box::into_raw(Box::new(RespropGraph(g)));
            RespropStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Generate a stochastic block model graph.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_generate_sbm(
    n: usize,
    blocks: usize,
    p_intra: f64,
    p_inter: f64,
    feature_dim: usize,
    feature_noise: f64,
    seed: u64,
    out: *mut *mut RespropGraph,
) -> RespropStatus {
    if out.is_null() {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    }
    match resprop::graph::generate_sbm(n, blocks, p_intra, p_inter, feature_dim, feature_noise, seed)
    {
        Ok(g) => {
            *out = Box::into_raw(Box::new(RespropGraph(g)));
            RespropStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// # Safety
/// `g` must be a live graph handle (or NULL, which is a no-op).
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_free(g: *mut RespropGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must be a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_n_nodes(g: *const RespropGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.n_nodes())
}

/// # Safety
/// `g` must be a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_n_edges(g: *const RespropGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.n_edges())
}

/// Mean same-label neighbor fraction. `excluded` (optional) receives the
/// count of isolated nodes left out of the mean.
///
/// # Safety
/// `g` must be a live graph handle; `out` must be valid; `excluded` may be
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_homophily(
    g: *const RespropGraph,
    out: *mut f64,
    excluded: *mut usize,
) -> RespropStatus {
    let (Some(g), false) = (g.as_ref(), out.is_null()) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    match homophily_ratio(&g.0) {
        Ok((h, ex)) => {
            *out = h;
            if !excluded.is_null() {
                *excluded = ex;
            }
            RespropStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Structural perturbation: delete/add the given edge fractions.
///
/// # Safety
/// `g` must be a live graph handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_perturb(
    g: *const RespropGraph,
    del_rate: f64,
    add_rate: f64,
    seed: u64,
    out: *mut *mut RespropGraph,
) -> RespropStatus {
    let (Some(g), false) = (g.as_ref(), out.is_null()) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    match perturb_edges(&g.0, del_rate, add_rate, seed) {
        Ok(p) => {
            *out = Box::into_raw(Box::new(RespropGraph(p)));
            RespropStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Write the graph in the text format.
///
/// # Safety
/// `g` must be a live graph handle; `path` must be NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn resprop_graph_save(
    g: *const RespropGraph,
    path: *const c_char,
) -> RespropStatus {
    let (Some(g), Some(path)) = (g.as_ref(), cstr_arg(path)) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    match save_graph(&g.0, &PathBuf::from(path)) {
        Ok(()) => RespropStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Symmetric degree normalization (optionally with self-loops).
///
/// # Safety
/// `g` must be a live graph handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn resprop_operator_normalize(
    g: *const RespropGraph,
    with_self_loops: bool,
    out: *mut *mut RespropOperator,
) -> RespropStatus {
    let (Some(g), false) = (g.as_ref(), out.is_null()) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    let op = normalize_adjacency(&g.0, with_self_loops);
    *out = Box::into_raw(Box::new(RespropOperator(op)));
    RespropStatus::Ok
}

/// # Safety
/// `op` must be a live operator handle (or NULL, which is a no-op).
#[no_mangle]
pub unsafe extern "C" fn resprop_operator_free(op: *mut RespropOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Cached power-iteration estimate of the spectral norm.
///
/// # Safety
/// `op` must be a live operator handle.
#[no_mangle]
pub unsafe extern "C" fn resprop_operator_norm_estimate(op: *const RespropOperator) -> f64 {
    op.as_ref().map_or(f64::NAN, |o| o.0.norm_estimate)
}

/// Spectral-clip outcome with the exact golden-file field layout.
#[repr(C)]
pub struct RespropClipReport {
    pub nu_before: f64,
    pub nu_after: f64,
    pub scale: f64,
    pub epsilon: f64,
    pub kappa_before: f64,
    pub kappa_after: f64,
    pub converged_power_iters: usize,
}

/// Rescale the operator so its spectral norm cannot exceed one. `report`
/// (optional) receives the clip report; `out` receives the new handle.
///
/// # Safety
/// `op` must be a live operator handle; `out` must be valid; `report` may be
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn resprop_operator_clip(
    op: *const RespropOperator,
    epsilon: f64,
    report: *mut RespropClipReport,
    out: *mut *mut RespropOperator,
) -> RespropStatus {
    let (Some(op), false) = (op.as_ref(), out.is_null()) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    if epsilon <= 0.0 {
        set_error("epsilon must be positive");
        return RespropStatus::Usage;
    }
    let (clipped, rep) = spectral_clip(&op.0, epsilon, &PowerIterConfig::oracle());
    if !report.is_null() {
        *report = RespropClipReport {
            nu_before: rep.nu_before,
            nu_after: rep.nu_after,
            scale: rep.scale,
            epsilon: rep.epsilon,
            kappa_before: rep.kappa_before,
            kappa_after: rep.kappa_after,
            converged_power_iters: rep.converged_power_iters,
        };
    }
    *out = Box::into_raw(Box::new(RespropOperator(clipped)));
    RespropStatus::Ok
}

/// Rank-based ROC AUC with midrank ties. `labels` are 0/1 bytes.
///
/// # Safety
/// `scores` and `labels` must point to `len` readable elements; `out` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn resprop_roc_auc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> RespropStatus {
    if scores.is_null() || labels.is_null() || out.is_null() {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    }
    let scores = std::slice::from_raw_parts(scores, len);
    let labels: Vec<bool> = std::slice::from_raw_parts(labels, len)
        .iter()
        .map(|&b| b != 0)
        .collect();
    match resprop::metrics::roc_auc(scores, &labels) {
        Ok(a) => {
            *out = a;
            RespropStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Run a full training experiment from a JSON config for one seed and return
/// the metric report as a JSON string (free with [`resprop_string_free`]).
///
/// # Safety
/// `config_json` must be NUL-terminated UTF-8; `out_metrics_json` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn resprop_train_run(
    config_json: *const c_char,
    seed: u64,
    out_metrics_json: *mut *mut c_char,
) -> RespropStatus {
    let (Some(text), false) = (cstr_arg(config_json), out_metrics_json.is_null()) else {
        set_error("null pointer argument");
        return RespropStatus::NullPointer;
    };
    let cfg = match ExperimentConfig::from_json(text) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run_training(&cfg, seed) {
        Ok(run) => {
            let json = run.metrics.to_json();
            match CString::new(json) {
                Ok(c) => {
                    *out_metrics_json = c.into_raw();
                    RespropStatus::Ok
                }
                Err(_) => {
                    set_error("metrics JSON contained an interior NUL");
                    RespropStatus::Io
                }
            }
        }
        Err(e) => fail(&e),
    }
}
