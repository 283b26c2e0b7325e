//! C ABI over `gw-core`.
//!
//! Objects cross the boundary as opaque heap handles created by
//! `gw_*_new`/`gw_*_from_json` style functions and released with the
//! matching `gw_*_free`. Every function returns a [`GwStatus`]; on failure
//! a message is kept per thread and can be read with
//! [`gw_last_error_message`]. Panics never unwind into C.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gw_core::graph_model::{embed, GraphDistribution};
use gw_core::gw_solver::{default_starts, entropic_uniqueness_margin, solve_problem, GwProblem, SolveReport};
use gw_core::hypothesis_test::{iso_test, rep_draw_seed, sample_pair, MatchMode};
use gw_core::limit_sampler::{build_polytope, sample_ln, CostGaussianSpec};
use gw_core::{DiscreteMeasure, Error};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Solver = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Matching strategy for [`gw_iso_test`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwMatchMode {
    Exhaustive = 0,
    Relaxed = 1,
}

/// Finitely supported probability measure.
pub struct GwMeasure(DiscreteMeasure);

/// Independent-edge random graph model.
pub struct GwGraphModel(GraphDistribution);

/// Result of a distance computation.
pub struct GwReport(SolveReport);

/// Outcome of [`gw_iso_test`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GwTestOutcome {
    pub statistic: f64,
    /// `+inf` when `alpha = 0`.
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub n: usize,
    pub draws_used: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(GwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => GwStatus::Parse,
            Error::OtFailure { .. }
            | Error::SinkhornNotConverged { .. }
            | Error::LpFailure { .. }
            | Error::LpUnbounded(_)
            | Error::Replicate { .. }
            | Error::SweepCell { .. } => GwStatus::Solver,
            _ => GwStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GwStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> GwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GwStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            GwStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(GwStatus::Parse, format!("{what} is not UTF-8: {e}")))
}

fn parse<T: for<'de> serde::Deserialize<'de>>(s: &str, what: &str) -> Result<T, Fail> {
    serde_json::from_str(s).map_err(|e| Fail(GwStatus::Parse, format!("{what}: {e}")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Measure with `len` atoms in dimension `dim`; `points` is row-major
/// `len * dim`, `weights` has `len` entries summing to one.
#[no_mangle]
pub unsafe extern "C" fn gw_measure_new(
    dim: usize,
    len: usize,
    points: *const f64,
    weights: *const f64,
    out: *mut *mut GwMeasure,
) -> GwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if points.is_null() || weights.is_null() {
            return Err(null("points or weights"));
        }
        let total = dim
            .checked_mul(len)
            .ok_or_else(|| Fail(GwStatus::InvalidArgument, "size overflow".into()))?;
        let pts = std::slice::from_raw_parts(points, total).to_vec();
        let w = std::slice::from_raw_parts(weights, len).to_vec();
        *out = boxed(GwMeasure(DiscreteMeasure::from_flat(dim, pts, w)?));
        Ok(())
    })
}

/// Measure from `{"points": [[...]], "weights": [...]}`.
#[no_mangle]
pub unsafe extern "C" fn gw_measure_from_json(json: *const c_char, out: *mut *mut GwMeasure) -> GwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m: DiscreteMeasure = parse(c_str(json, "json")?, "measure")?;
        *out = boxed(GwMeasure(m));
        Ok(())
    })
}

/// Number of atoms and ambient dimension.
#[no_mangle]
pub unsafe extern "C" fn gw_measure_shape(m: *const GwMeasure, len: *mut usize, dim: *mut usize) -> GwStatus {
    guard(|| {
        let m = borrow(m, "measure")?;
        *out_ptr(len, "len")? = m.0.len();
        *out_ptr(dim, "dim")? = m.0.dim();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gw_measure_free(m: *mut GwMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Graph model from `{"n": N, "edges": [{"i","j","support","probs"}]}`
/// with 0-based vertices.
#[no_mangle]
pub unsafe extern "C" fn gw_model_from_json(json: *const c_char, out: *mut *mut GwGraphModel) -> GwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let g: GraphDistribution = parse(c_str(json, "json")?, "graph model")?;
        *out = boxed(GwGraphModel(g));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gw_model_free(g: *mut GwGraphModel) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Embedded measure of a graph model on `R^N`.
#[no_mangle]
pub unsafe extern "C" fn gw_model_embed(g: *const GwGraphModel, out: *mut *mut GwMeasure) -> GwStatus {
    guard(|| {
        let g = borrow(g, "model")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(GwMeasure(embed(&g.0)?));
        Ok(())
    })
}

/// Squared GW distance (`eps = 0`) or entropic GW (`eps > 0`) with the
/// default multi-start strategy.
#[no_mangle]
pub unsafe extern "C" fn gw_distance(
    mu0: *const GwMeasure,
    mu1: *const GwMeasure,
    eps: f64,
    seed: u64,
    out: *mut *mut GwReport,
) -> GwStatus {
    guard(|| {
        let (a, b) = (borrow(mu0, "mu0")?, borrow(mu1, "mu1")?);
        let out = out_ptr(out, "out")?;
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Fail(GwStatus::InvalidArgument, format!("eps must be nonnegative, got {eps}")));
        }
        let prob = GwProblem::new(&a.0, &b.0).with_eps(eps);
        let rep = solve_problem(&prob, &default_starts(&prob, seed))?;
        *out = boxed(GwReport(rep));
        Ok(())
    })
}

/// Scalar fields of a report. Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn gw_report_summary(
    r: *const GwReport,
    value: *mut f64,
    subgrad_norm: *mut f64,
    iterations: *mut usize,
    converged: *mut bool,
) -> GwStatus {
    guard(|| {
        let r = &borrow(r, "report")?.0;
        if let Some(v) = value.as_mut() {
            *v = r.value;
        }
        if let Some(v) = subgrad_norm.as_mut() {
            *v = r.subgrad_norm;
        }
        if let Some(v) = iterations.as_mut() {
            *v = r.iterations;
        }
        if let Some(v) = converged.as_mut() {
            *v = r.converged;
        }
        Ok(())
    })
}

/// Copy the minimizing matrix, row-major, into `buf` of `cap` entries.
/// `rows`/`cols` receive the shape even when `buf` is too small.
#[no_mangle]
pub unsafe extern "C" fn gw_report_a_opt(
    r: *const GwReport,
    buf: *mut f64,
    cap: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> GwStatus {
    guard(|| {
        let a = &borrow(r, "report")?.0.a_opt;
        *out_ptr(rows, "rows")? = a.nrows();
        *out_ptr(cols, "cols")? = a.ncols();
        let need = a.len();
        if cap < need {
            return Err(Fail(GwStatus::BufferTooSmall, format!("need {need} entries, got {cap}")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                dst[i * a.ncols() + j] = a[(i, j)];
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gw_report_free(r: *mut GwReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// `eps − 16 √(M4(μ̄0) M4(μ̄1))`; positive means a unique entropic minimizer.
#[no_mangle]
pub unsafe extern "C" fn gw_entropic_margin(
    mu0: *const GwMeasure,
    mu1: *const GwMeasure,
    eps: f64,
    out: *mut f64,
) -> GwStatus {
    guard(|| {
        let (a, b) = (borrow(mu0, "mu0")?, borrow(mu1, "mu1")?);
        *out_ptr(out, "out")? = entropic_uniqueness_margin(&a.0, &b.0, eps);
        Ok(())
    })
}

fn write_draws(values: &[f64], buf: *mut f64) {
    // caller checked capacity and non-null
    unsafe { std::slice::from_raw_parts_mut(buf, values.len()) }.copy_from_slice(values);
}

/// `draws` samples of the null limit law of a measure (multinomial cost).
#[no_mangle]
pub unsafe extern "C" fn gw_limit_sample(
    mu: *const GwMeasure,
    delta: f64,
    draws: usize,
    seed: u64,
    buf: *mut f64,
    cap: usize,
) -> GwStatus {
    guard(|| {
        let mu = &borrow(mu, "measure")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < draws {
            return Err(Fail(GwStatus::BufferTooSmall, format!("need {draws} entries, got {cap}")));
        }
        let poly = build_polytope(mu, delta)?;
        let values = sample_ln(&poly, &CostGaussianSpec::plain(mu), draws, seed)?;
        write_draws(&values, buf);
        Ok(())
    })
}

/// Same for the embedding of a graph model (block cost structure).
#[no_mangle]
pub unsafe extern "C" fn gw_limit_sample_graph(
    g: *const GwGraphModel,
    delta: f64,
    draws: usize,
    seed: u64,
    buf: *mut f64,
    cap: usize,
) -> GwStatus {
    guard(|| {
        let g = &borrow(g, "model")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < draws {
            return Err(Fail(GwStatus::BufferTooSmall, format!("need {draws} entries, got {cap}")));
        }
        let emb = gw_core::graph_model::embed_with_index(g)?;
        let poly = build_polytope(&emb.measure, delta)?;
        let spec = CostGaussianSpec::graph_block(g, &emb)?;
        let values = sample_ln(&poly, &spec, draws, seed)?;
        write_draws(&values, buf);
        Ok(())
    })
}

/// Sample `n` graphs from each model and run the isomorphism test; the
/// same seed gives the same result as `gw test-iso`.
#[no_mangle]
pub unsafe extern "C" fn gw_iso_test(
    model0: *const GwGraphModel,
    model1: *const GwGraphModel,
    n: usize,
    alpha: f64,
    draws: usize,
    mode: GwMatchMode,
    seed: u64,
    out: *mut GwTestOutcome,
) -> GwStatus {
    guard(|| {
        let (g0, g1) = (&borrow(model0, "model0")?.0, &borrow(model1, "model1")?.0);
        let out = out_ptr(out, "out")?;
        if n == 0 {
            return Err(Fail(GwStatus::InvalidArgument, "n must be at least 1".into()));
        }
        let mode = match mode {
            GwMatchMode::Exhaustive => MatchMode::Exhaustive,
            GwMatchMode::Relaxed => MatchMode::Relaxed,
        };
        let (s0, s1) = sample_pair(g0, g1, n, seed, 0);
        let t = iso_test(&s0, &s1, alpha, draws, mode, rep_draw_seed(seed, 0))?;
        *out = GwTestOutcome {
            statistic: t.statistic,
            critical_value: t.critical_value,
            alpha: t.alpha,
            reject: t.reject,
            n: t.n,
            draws_used: t.draws_used,
        };
        Ok(())
    })
}
