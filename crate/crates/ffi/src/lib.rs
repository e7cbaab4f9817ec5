//! C interface to the charging price solver.
//!
//! Objects cross the boundary as opaque handles created by `cp_*_load`,
//! `cp_explore` or `cp_solve_bilevel` and released by the matching `*_free`.
//! Every fallible call returns a [`CpStatus`]; on failure the message is
//! available from [`cp_last_error_message`] on the same thread. Handles are
//! immutable after creation and may be shared between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chargeprice::bilevel::{
    solve_bilevel, verify_kkt_equilibrium, BilevelResult, CoupledProblem, EquilibriumPoint,
};
use chargeprice::grid::{load_grid, parse_grid};
use chargeprice::mpqp::{explore, PartitionFile, PiecewiseAffineDemandFunction};
use chargeprice::scenario::{RunConfig, SolveReport};
use chargeprice::traffic::{load_traffic, parse_traffic};
use chargeprice::Error;
use nalgebra::DVector;

/// Result codes. Values 2 to 5 match the exit codes of the command line tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    InvalidInput = 2,
    Infeasible = 3,
    SolverFailure = 4,
    Coverage = 5,
    NullPointer = 6,
    Panic = 7,
    BufferTooSmall = 8,
}

/// Run settings. Obtain defaults from [`cp_run_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpRunOptions {
    /// When false the price box is `[0, 2 max c]` and the bounds are ignored.
    pub has_price_box: bool,
    pub price_lo: f64,
    pub price_hi: f64,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: u32,
    pub tol_kkt: f64,
    pub tol_active: f64,
}

/// Cost terms of a pricing solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CpCosts {
    pub idso: f64,
    pub dispatch: f64,
    pub itso: f64,
    pub latency: f64,
    pub charging_expense: f64,
    pub combined: f64,
}

/// Coupled traffic network and distribution grid.
pub struct CpProblem {
    inner: CoupledProblem,
}

/// Explicit piecewise-affine station demand as a function of prices.
pub struct CpDemandFunction {
    inner: PiecewiseAffineDemandFunction,
}

/// Optimal prices with the dispatch and traffic response.
pub struct CpResult {
    inner: BilevelResult,
    report: SolveReport,
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Buffer { needed: usize, given: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn status(&self) -> CpStatus {
        match self {
            Failure::Core(e) => match e.exit_code() {
                2 => CpStatus::InvalidInput,
                3 => CpStatus::Infeasible,
                5 => CpStatus::Coverage,
                _ => CpStatus::SolverFailure,
            },
            Failure::Null(_) => CpStatus::NullPointer,
            Failure::Buffer { .. } => CpStatus::BufferTooSmall,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => format!("{}: {e}", e.kind()),
            Failure::Null(what) => format!("null pointer: {what}"),
            Failure::Buffer { needed, given } => {
                format!("buffer holds {given} values, {needed} needed")
            }
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CpStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(fail.message());
            fail.status()
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            CpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::InvalidInput(format!("{what} is not valid UTF-8"))))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_to(values: &DVector<f64>, out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    if len < values.len() {
        return Err(Failure::Buffer {
            needed: values.len(),
            given: len,
        });
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn json_out(value: &impl serde::Serialize, out: *mut *mut c_char) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialization: {e}")))?;
    *out = CString::new(text).unwrap_or_default().into_raw();
    Ok(())
}

unsafe fn config(opts: *const CpRunOptions) -> Result<RunConfig, Failure> {
    let o = opts
        .as_ref()
        .copied()
        .unwrap_or_else(|| cp_run_options_default());
    let cfg = RunConfig {
        lambda_box: o.has_price_box.then_some((o.price_lo, o.price_hi)),
        seed: o.seed,
        workers: o.workers as usize,
        tol_kkt: o.tol_kkt,
        tol_active: o.tol_active,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next `cp_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by a `*_to_json` call.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn cp_run_options_default() -> CpRunOptions {
    let d = RunConfig::default();
    CpRunOptions {
        has_price_box: false,
        price_lo: 0.0,
        price_hi: 0.0,
        seed: d.seed,
        workers: d.workers as u32,
        tol_kkt: d.tol_kkt,
        tol_active: d.tol_active,
    }
}

/// Reads a traffic file and a grid file.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_problem_load(
    traffic_path: *const c_char,
    grid_path: *const c_char,
    out: *mut *mut CpProblem,
) -> CpStatus {
    run(|| {
        let traffic = load_traffic(Path::new(str_arg(traffic_path, "traffic_path")?))?;
        let grid = load_grid(Path::new(str_arg(grid_path, "grid_path")?))?;
        write_out(
            out,
            CpProblem {
                inner: CoupledProblem::new(traffic, grid)?,
            },
        )
    })
}

/// Parses the traffic and grid documents from strings.
///
/// # Safety
/// Arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_problem_from_json(
    traffic_json: *const c_char,
    grid_json: *const c_char,
    out: *mut *mut CpProblem,
) -> CpStatus {
    run(|| {
        let traffic = parse_traffic(str_arg(traffic_json, "traffic_json")?)?;
        let grid = parse_grid(str_arg(grid_json, "grid_json")?)?;
        write_out(
            out,
            CpProblem {
                inner: CoupledProblem::new(traffic, grid)?,
            },
        )
    })
}

/// Number of charging stations, 0 for a NULL handle.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_problem_station_count(problem: *const CpProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.num_stations())
}

/// # Safety
/// `problem` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cp_problem_free(problem: *mut CpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Computes the explicit demand function over the price box. `opts` may be
/// NULL for defaults.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_explore(
    problem: *const CpProblem,
    opts: *const CpRunOptions,
    out: *mut *mut CpDemandFunction,
) -> CpStatus {
    run(|| {
        let p = &handle(problem, "problem")?.inner;
        let cfg = config(opts)?;
        let pi = cfg.install(|| {
            let domain = cfg.price_box(p)?;
            explore(
                &p.traffic_qp,
                &domain,
                &domain.center(),
                &cfg.explore_options(),
            )
        })??;
        write_out(out, CpDemandFunction { inner: pi })
    })
}

/// Number of critical regions, 0 for a NULL handle.
///
/// # Safety
/// `pi` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_demand_function_region_count(pi: *const CpDemandFunction) -> usize {
    pi.as_ref().map_or(0, |p| p.inner.len())
}

/// Station demands at `prices`. Both arrays have one entry per station.
///
/// # Safety
/// `prices` must hold `n_prices` values and `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn cp_demand_function_evaluate(
    pi: *const CpDemandFunction,
    prices: *const f64,
    n_prices: usize,
    out: *mut f64,
    out_len: usize,
) -> CpStatus {
    run(|| {
        let pi = &handle(pi, "demand_function")?.inner;
        if prices.is_null() {
            return Err(Failure::Null("prices"));
        }
        if n_prices != pi.num_stations() {
            return Err(Error::InvalidInput(format!(
                "{n_prices} prices given for {} stations",
                pi.num_stations()
            ))
            .into());
        }
        let lam = DVector::from_column_slice(std::slice::from_raw_parts(prices, n_prices));
        copy_to(&pi.evaluate(&lam)?, out, out_len)
    })
}

/// Index of the critical region containing `prices`.
///
/// # Safety
/// `prices` must hold `n_prices` values; `region` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_demand_function_locate(
    pi: *const CpDemandFunction,
    prices: *const f64,
    n_prices: usize,
    region: *mut usize,
) -> CpStatus {
    run(|| {
        let pi = &handle(pi, "demand_function")?.inner;
        if prices.is_null() || region.is_null() {
            return Err(Failure::Null("prices or region"));
        }
        if n_prices != pi.num_stations() {
            return Err(Error::InvalidInput(format!(
                "{n_prices} prices given for {} stations",
                pi.num_stations()
            ))
            .into());
        }
        let lam = DVector::from_column_slice(std::slice::from_raw_parts(prices, n_prices));
        *region = pi.locate(&lam)?;
        Ok(())
    })
}

/// Partition export as JSON. Release with [`cp_string_free`].
///
/// # Safety
/// `pi` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_demand_function_to_json(
    pi: *const CpDemandFunction,
    out: *mut *mut c_char,
) -> CpStatus {
    run(|| {
        json_out(
            &PartitionFile::from_partition(&handle(pi, "demand_function")?.inner),
            out,
        )
    })
}

/// # Safety
/// `pi` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cp_demand_function_free(pi: *mut CpDemandFunction) {
    if !pi.is_null() {
        drop(Box::from_raw(pi));
    }
}

/// Optimal station prices given a demand function computed for `problem`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_solve_bilevel(
    problem: *const CpProblem,
    pi: *const CpDemandFunction,
    opts: *const CpRunOptions,
    out: *mut *mut CpResult,
) -> CpStatus {
    run(|| {
        let p = &handle(problem, "problem")?.inner;
        let pi = &handle(pi, "demand_function")?.inner;
        if pi.num_stations() != p.num_stations() {
            return Err(
                Error::InvalidInput("demand function belongs to another problem".into()).into(),
            );
        }
        let cfg = config(opts)?;
        let (res, report) = cfg.install(|| {
            let res = solve_bilevel(p, pi, &cfg.solver())?;
            let kkt = verify_kkt_equilibrium(p, &EquilibriumPoint::from_bilevel(&res))?;
            let report = SolveReport::new(p, pi, &res, &kkt);
            Ok::<_, Error>((res, report))
        })??;
        write_out(out, CpResult { inner: res, report })
    })
}

/// Number of stations in the result, 0 for a NULL handle.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_result_station_count(res: *const CpResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.station_prices.len())
}

/// # Safety
/// `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn cp_result_station_prices(
    res: *const CpResult,
    out: *mut f64,
    out_len: usize,
) -> CpStatus {
    run(|| copy_to(&handle(res, "result")?.inner.station_prices, out, out_len))
}

/// # Safety
/// `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn cp_result_station_demands(
    res: *const CpResult,
    out: *mut f64,
    out_len: usize,
) -> CpStatus {
    run(|| copy_to(&handle(res, "result")?.inner.station_demands, out, out_len))
}

/// # Safety
/// `out` must hold `out_len` values, one per bus.
#[no_mangle]
pub unsafe extern "C" fn cp_result_bus_prices(
    res: *const CpResult,
    out: *mut f64,
    out_len: usize,
) -> CpStatus {
    run(|| copy_to(&handle(res, "result")?.inner.bus_prices, out, out_len))
}

/// # Safety
/// `res` must be a live handle; `region` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_result_region_id(res: *const CpResult, region: *mut usize) -> CpStatus {
    run(|| {
        let r = handle(res, "result")?;
        if region.is_null() {
            return Err(Failure::Null("region"));
        }
        *region = r.inner.region_id;
        Ok(())
    })
}

/// # Safety
/// `res` must be a live handle; `costs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_result_costs(res: *const CpResult, costs: *mut CpCosts) -> CpStatus {
    run(|| {
        let r = &handle(res, "result")?.inner;
        if costs.is_null() {
            return Err(Failure::Null("costs"));
        }
        *costs = CpCosts {
            idso: r.idso_cost,
            dispatch: r.dispatch_cost,
            itso: r.itso_cost,
            latency: r.latency_cost,
            charging_expense: r.charging_expense,
            combined: r.combined_cost,
        };
        Ok(())
    })
}

/// Result document with the same layout as the `solve` command's output.
/// Release with [`cp_string_free`].
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_result_to_json(
    res: *const CpResult,
    out: *mut *mut c_char,
) -> CpStatus {
    run(|| json_out(&handle(res, "result")?.report, out))
}

/// # Safety
/// `res` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cp_result_free(res: *mut CpResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
