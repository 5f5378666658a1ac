//! C interface to `hjlab`.
//!
//! Objects cross the boundary as opaque handles created by `hjlab_*_new`
//! style functions and released with the matching `*_free`. Every fallible
//! function returns an [`HjlabStatus`]; on failure the message is kept per
//! thread and read with [`hjlab_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hjlab::cli::{run_in, ExperimentConfig, RunStatus};
use hjlab::convexanalysis::{dual_lattice, legendre_transform, ConvexTable};
use hjlab::environment::{evaluate_h, parse_env_spec, sample_environment, CoefficientSet};
use hjlab::hjsolver::{solve_metric, Boundary, MetricField, SolverGrid, SolverOptions};
use hjlab::homogenize::{estimate_hbar_cell, CellRouteOptions};
use hjlab::lattice::{Lattice, MAX_DIM};
use hjlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HjlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    Domain = 3,
    Subcritical = 4,
    Solver = 5,
    Bracket = 6,
    GridRange = 7,
    Level = 8,
    Io = 9,
    Format = 10,
    Panic = 11,
    /// An experiment ran but one of its checks failed.
    CheckFailed = 12,
}

/// Sampled coefficient fields.
pub struct HjlabEnvironment(CoefficientSet);

/// Solution of the metric problem on a box.
pub struct HjlabMetricField(MetricField);

/// Table of a function on a box lattice; `+inf` marks points outside the
/// effective domain.
pub struct HjlabTable(ConvexTable);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HjlabStatus {
    match e {
        Error::Config { .. } => HjlabStatus::InvalidConfig,
        Error::Domain(_) => HjlabStatus::Domain,
        Error::Subcritical { .. } => HjlabStatus::Subcritical,
        Error::Solver { .. } => HjlabStatus::Solver,
        Error::Bracket(_) => HjlabStatus::Bracket,
        Error::GridRange(_) => HjlabStatus::GridRange,
        Error::Level(_) => HjlabStatus::Level,
        Error::Io(_) | Error::MissingOutputs(_) => HjlabStatus::Io,
        Error::Format(_) | Error::Json(_) => HjlabStatus::Format,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<HjlabStatus, Fail>) -> HjlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HjlabStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HjlabStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::domain(format!("{what} is not valid UTF-8"))))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &'static str) -> Result<HjlabStatus, Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(HjlabStatus::Ok)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hjlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the last error message of this thread into `buf` (truncated and
/// NUL-terminated). Returns the full message length without the NUL, or 0
/// when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hjlab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

#[no_mangle]
pub extern "C" fn hjlab_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Parse an environment specification (TOML text) and sample it.
///
/// # Safety
/// `spec_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjlab_env_new(spec_toml: *const c_char, seed: u64, out: *mut *mut HjlabEnvironment) -> HjlabStatus {
    guard(|| {
        let text = string(spec_toml, "spec_toml")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let spec = parse_env_spec(text)?;
        let cs = sample_environment(&spec, seed)?;
        write_out(out, Box::into_raw(Box::new(HjlabEnvironment(cs))), "out")
    })
}

/// # Safety
/// `env` must come from [`hjlab_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hjlab_env_free(env: *mut HjlabEnvironment) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Dimension of the environment, 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjlab_env_dimension(env: *const HjlabEnvironment) -> usize {
    env.as_ref().map_or(0, |e| e.0.dim())
}

/// `H(p, y)` with `p` and `y` of length `dim`.
///
/// # Safety
/// `p` and `y` must point to `dim` doubles, `out` to one.
#[no_mangle]
pub unsafe extern "C" fn hjlab_env_evaluate_h(
    env: *const HjlabEnvironment,
    p: *const f64,
    y: *const f64,
    dim: usize,
    out: *mut f64,
) -> HjlabStatus {
    guard(|| {
        let cs = &reference(env, "env")?.0;
        if dim != cs.dim() {
            return Err(Error::domain(format!("dim {dim} differs from the environment dimension {}", cs.dim())).into());
        }
        let p = slice(p, dim, "p")?;
        let y = slice(y, dim, "y")?;
        write_out(out, evaluate_h(cs, p, y), "out")
    })
}

/// Maximal subsolution at level `mu` with pole `z`, on the box of
/// half-width `half_width` and spacing `h` centered at `z`.
///
/// # Safety
/// `z` must point to as many doubles as the environment dimension.
#[no_mangle]
pub unsafe extern "C" fn hjlab_solve_metric(
    env: *const HjlabEnvironment,
    mu: f64,
    z: *const f64,
    half_width: f64,
    h: f64,
    out: *mut *mut HjlabMetricField,
) -> HjlabStatus {
    guard(|| {
        let cs = &reference(env, "env")?.0;
        let z = slice(z, cs.dim(), "z")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let grid = SolverGrid::centered_box(z, half_width, h, Boundary::DirichletCone)?;
        let field = solve_metric(cs, mu, z, &grid, &SolverOptions::default())?;
        write_out(out, Box::into_raw(Box::new(HjlabMetricField(field))), "out")
    })
}

/// Interpolated value of the metric field; `Domain` outside the box.
///
/// # Safety
/// `y` must point to as many doubles as the field dimension.
#[no_mangle]
pub unsafe extern "C" fn hjlab_metric_value_at(field: *const HjlabMetricField, y: *const f64, out: *mut f64) -> HjlabStatus {
    guard(|| {
        let f = &reference(field, "field")?.0;
        let y = slice(y, f.lattice.dim, "y")?;
        let v = f.value_at(y).ok_or_else(|| Error::domain("point outside the solved box"))?;
        write_out(out, v, "out")
    })
}

/// # Safety
/// `field` must come from [`hjlab_solve_metric`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hjlab_metric_free(field: *mut HjlabMetricField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Effective Hamiltonian at `p` by the discounted cell problem on the
/// environment torus, along the decreasing discounts `eps[0..n_eps]`.
/// `error` may be null.
///
/// # Safety
/// `p` must point to dimension-many doubles and `eps` to `n_eps`.
#[no_mangle]
pub unsafe extern "C" fn hjlab_hbar_cell(
    env: *const HjlabEnvironment,
    p: *const f64,
    eps: *const f64,
    n_eps: usize,
    out: *mut f64,
    error: *mut f64,
) -> HjlabStatus {
    guard(|| {
        let cs = &reference(env, "env")?.0;
        let p = slice(p, cs.dim(), "p")?;
        let eps = slice(eps, n_eps, "eps")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let est = estimate_hbar_cell(cs, p, eps, &CellRouteOptions::default())?;
        if !error.is_null() {
            error.write(est.error);
        }
        write_out(out, est.limit, "out")
    })
}

/// Table on the box lattice with `shape[k]` nodes from `origin[k]` in steps
/// of `step[k]`; `values` is row-major with the last axis fastest.
///
/// # Safety
/// `origin`, `step` and `shape` must point to `dim` entries and `values` to
/// the product of the shape.
#[no_mangle]
pub unsafe extern "C" fn hjlab_table_new(
    dim: usize,
    origin: *const f64,
    step: *const f64,
    shape: *const usize,
    values: *const f64,
    out: *mut *mut HjlabTable,
) -> HjlabStatus {
    guard(|| {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::domain(format!("dimension {dim} not in 1..=3")).into());
        }
        let origin = slice(origin, dim, "origin")?;
        let step = slice(step, dim, "step")?;
        if shape.is_null() {
            return Err(Fail::Null("shape"));
        }
        let shape = std::slice::from_raw_parts(shape, dim);
        let lattice = Lattice::new(origin, step, shape, false)?;
        let values = slice(values, lattice.len(), "values")?.to_vec();
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let t = ConvexTable::new(lattice, values)?;
        write_out(out, Box::into_raw(Box::new(HjlabTable(t))), "out")
    })
}

/// Legendre transform on the dual lattice spanned by the chord slopes.
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjlab_legendre_transform(table: *const HjlabTable, out: *mut *mut HjlabTable) -> HjlabStatus {
    guard(|| {
        let f = &reference(table, "table")?.0;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let z = dual_lattice(f)?;
        let l = legendre_transform(f, &z)?;
        write_out(out, Box::into_raw(Box::new(HjlabTable(l))), "out")
    })
}

/// Number of nodes, 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjlab_table_len(table: *const HjlabTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.values.len())
}

/// Copy the values into `buf`, which must hold [`hjlab_table_len`] doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hjlab_table_values(table: *const HjlabTable, buf: *mut f64, len: usize) -> HjlabStatus {
    guard(|| {
        let t = &reference(table, "table")?.0;
        if len != t.values.len() {
            return Err(Error::domain(format!("buffer holds {len} values, table has {}", t.values.len())).into());
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        ptr::copy_nonoverlapping(t.values.as_ptr(), buf, len);
        Ok(HjlabStatus::Ok)
    })
}

/// Coordinates of node `index` written to `buf[0..dim]`.
///
/// # Safety
/// `buf` must point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hjlab_table_point(table: *const HjlabTable, index: usize, buf: *mut f64, dim: usize) -> HjlabStatus {
    guard(|| {
        let t = &reference(table, "table")?.0;
        if index >= t.values.len() || dim != t.dim() {
            return Err(Error::domain("index or dimension out of range").into());
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let p = t.lattice.point(index);
        ptr::copy_nonoverlapping(p.as_ptr(), buf, dim);
        Ok(HjlabStatus::Ok)
    })
}

/// # Safety
/// `table` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hjlab_table_free(table: *mut HjlabTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Run the experiment described by the TOML file `config_path` into
/// `output_dir` (the configured or default directory when null). Returns
/// `CheckFailed` when the run completed with a failing check.
///
/// # Safety
/// Both strings must be NUL-terminated; `output_dir` may be null.
#[no_mangle]
pub unsafe extern "C" fn hjlab_run_experiment(config_path: *const c_char, output_dir: *const c_char) -> HjlabStatus {
    guard(|| {
        let path = string(config_path, "config_path")?;
        let cfg = ExperimentConfig::load(Path::new(path))?;
        let out = if output_dir.is_null() {
            cfg.resolve_output_dir()
        } else {
            string(output_dir, "output_dir")?.into()
        };
        let m = run_in(&cfg, &out)?;
        match m.status {
            RunStatus::Passed => Ok(HjlabStatus::Ok),
            RunStatus::Failed => {
                let names: Vec<&str> = m.failed_checks().map(|c| c.name.as_str()).collect();
                set_error(format!("failed checks: {}", names.join(", ")));
                Ok(HjlabStatus::CheckFailed)
            }
            RunStatus::Error => {
                let f = m.failure.expect("error runs record the stage");
                Err(Error::Solver {
                    msg: format!("stage `{}`: {}", f.stage, f.message),
                    trace: Vec::new(),
                }
                .into())
            }
        }
    })
}
