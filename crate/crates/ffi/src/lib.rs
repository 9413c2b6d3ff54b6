//! C interface: opaque handles, status codes and a thread-local error message.
//!
//! Every `*_new`, `mtd2d_moments_from_grid` and `mtd2d_recover` result has a
//! matching `*_free`. Coefficients cross the boundary as interleaved
//! `(re, im)` doubles, `2 * mtd2d_basis_len` values in basis order.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mtd2d::measurement::{place_occurrences, render_measurement, snr_to_sigma, PlacementTarget};
use mtd2d::moments::empirical_ac;
use mtd2d::recovery::{recover, relative_error_alpha, RecoveryOptions, SeparationKnowledge};
use mtd2d::{
    BasisSpec, BasisTables, CoefficientVector, Complex64, Error, FreqVectors, Measurement, MomentSet, PlacementMode,
    PlacementPolicy, RecoveryResult,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mtd2dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

/// How separation between occurrences is handled during recovery.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mtd2dCase {
    /// Two-stage fit with surrogate separation functions.
    Approximated = 1,
    /// Cross terms between neighbours are dropped.
    Ignored = 2,
}

/// A steerable basis with its precomputed tables.
pub struct Mtd2dBasis {
    fv: FreqVectors,
}

/// Autocorrelations of one measurement.
pub struct Mtd2dMoments {
    set: MomentSet,
}

/// Outcome of a multi-start recovery.
pub struct Mtd2dRecovery {
    result: RecoveryResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Mtd2dStatus {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Format(_) => Mtd2dStatus::Io,
        e if e.exit_code() == 2 => Mtd2dStatus::InvalidArgument,
        Error::RealityViolation { .. } | Error::ZeroEnergy | Error::PlacementInfeasible { .. } => {
            Mtd2dStatus::InvalidArgument
        }
        _ => Mtd2dStatus::Numerical,
    }
}

/// Runs `f`, recording any error or panic for `mtd2d_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (Mtd2dStatus, String)>) -> Mtd2dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Mtd2dStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            Mtd2dStatus::Panic
        }
    }
}

fn fail(e: Error) -> (Mtd2dStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (Mtd2dStatus, String) {
    (Mtd2dStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> (Mtd2dStatus, String) {
    (Mtd2dStatus::InvalidArgument, msg)
}

unsafe fn coefficients(basis: &Mtd2dBasis, values: *const f64, len: usize) -> Result<CoefficientVector, (Mtd2dStatus, String)> {
    if values.is_null() {
        return Err(null("coefficients"));
    }
    let spec = &basis.fv.tables.spec;
    if len != 2 * spec.len() {
        return Err(invalid(format!("{len} values, expected {}", 2 * spec.len())));
    }
    let raw = std::slice::from_raw_parts(values, len);
    let alpha = CoefficientVector {
        values: raw.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect(),
    };
    let defect = spec.reality_defect(&alpha);
    if !(defect <= 1e-9 * alpha.norm().max(1.0)) {
        return Err(fail(Error::RealityViolation { max_imag: defect }));
    }
    Ok(alpha)
}

unsafe fn write_coefficients(alpha: &CoefficientVector, out: *mut f64, len: usize) -> Result<(), (Mtd2dStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != 2 * alpha.values.len() {
        return Err(invalid(format!("buffer holds {len} values, need {}", 2 * alpha.values.len())));
    }
    let dst = std::slice::from_raw_parts_mut(out, len);
    for (d, c) in dst.chunks_mut(2).zip(&alpha.values) {
        d[0] = c.re;
        d[1] = c.im;
    }
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (Mtd2dStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != src.len() {
        return Err(invalid(format!("buffer holds {len} values, need {}", src.len())));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(src);
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mtd2d_version() -> *const c_char {
    static VERSION: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mtd2d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Basis of the `count` lowest-bandlimit functions on a disk of `radius` pixels.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_basis_new(radius: f64, count: usize, out: *mut *mut Mtd2dBasis) -> Mtd2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = BasisSpec::with_count(radius, count).map_err(fail)?;
        let fv = FreqVectors::new(&BasisTables::build(&spec));
        *out = Box::into_raw(Box::new(Mtd2dBasis { fv }));
        Ok(())
    })
}

/// # Safety
/// `basis` must come from `mtd2d_basis_new` and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_basis_free(basis: *mut Mtd2dBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Number of complex coefficients, or 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_basis_len(basis: *const Mtd2dBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.fv.tables.spec.len())
}

/// Side `L` of the shift window the moments are taken over, or 0 for null.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_basis_window(basis: *const Mtd2dBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.fv.tables.spec.window())
}

/// Random real-image coefficients with standard normal free parameters.
///
/// # Safety
/// `out` must hold `2 * mtd2d_basis_len(basis)` doubles.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_basis_random_coefficients(
    basis: *const Mtd2dBasis,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> Mtd2dStatus {
    guard(|| {
        let b = basis.as_ref().ok_or_else(|| null("basis"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        write_coefficients(&b.fv.tables.spec.random(&mut rng), out, len)
    })
}

/// Simulates an `side x side` measurement with arbitrarily spaced copies at
/// density `gamma`, noise set by `snr` (`INFINITY` for none).
///
/// # Safety
/// `coeffs` must hold `coeffs_len` doubles, `grid` `side * side` doubles and
/// `sigma` one double (or be null).
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mtd2d_simulate(
    basis: *const Mtd2dBasis,
    coeffs: *const f64,
    coeffs_len: usize,
    side: usize,
    gamma: f64,
    snr: f64,
    seed: u64,
    grid: *mut f64,
    sigma: *mut f64,
) -> Mtd2dStatus {
    guard(|| {
        let b = basis.as_ref().ok_or_else(|| null("basis"))?;
        let alpha = coefficients(b, coeffs, coeffs_len)?;
        let tables = &b.fv.tables;
        let policy = PlacementPolicy {
            mode: PlacementMode::ArbitrarySpacing,
            target: PlacementTarget::Density(gamma),
        };
        let locs = place_occurrences(side, tables.spec.radius, &policy, seed).map_err(fail)?;
        let s = snr_to_sigma(tables, &alpha, snr).map_err(fail)?;
        let m = render_measurement(side, tables, &alpha, &locs, None, s, seed).map_err(fail)?;
        copy_out(&m.grid, grid, side * side)?;
        if !sigma.is_null() {
            *sigma = s;
        }
        Ok(())
    })
}

/// Autocorrelations of a row-major `side x side` grid for image `radius`.
///
/// # Safety
/// `grid` must hold `side * side` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_moments_from_grid(
    grid: *const f64,
    side: usize,
    radius: f64,
    out: *mut *mut Mtd2dMoments,
) -> Mtd2dStatus {
    guard(|| {
        if grid.is_null() {
            return Err(null("grid"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = side.checked_mul(side).ok_or_else(|| invalid(format!("side {side} overflows")))?;
        let mut m = Measurement::zeros(side, radius);
        m.grid.copy_from_slice(std::slice::from_raw_parts(grid, n));
        let set = empirical_ac(&m).map_err(fail)?;
        *out = Box::into_raw(Box::new(Mtd2dMoments { set }));
        Ok(())
    })
}

/// # Safety
/// `moments` must come from `mtd2d_moments_from_grid`. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_moments_free(moments: *mut Mtd2dMoments) {
    if !moments.is_null() {
        drop(Box::from_raw(moments));
    }
}

/// Window side `L`; `a2` has `L^2` entries and `a3` has `L^4`. 0 for null.
///
/// # Safety
/// `moments` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_moments_window(moments: *const Mtd2dMoments) -> usize {
    moments.as_ref().map_or(0, |m| m.set.window)
}

/// First moment, NaN for null.
///
/// # Safety
/// `moments` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_moments_a1(moments: *const Mtd2dMoments) -> f64 {
    moments.as_ref().map_or(f64::NAN, |m| m.set.a1)
}

/// Copies the second moment, `a2[ly * L + lx]`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_moments_a2(moments: *const Mtd2dMoments, out: *mut f64, len: usize) -> Mtd2dStatus {
    guard(|| copy_out(&moments.as_ref().ok_or_else(|| null("moments"))?.set.a2, out, len))
}

/// Copies the third moment, `a3[(l1y * L + l1x) * L^2 + l2y * L + l2x]`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_moments_a3(moments: *const Mtd2dMoments, out: *mut f64, len: usize) -> Mtd2dStatus {
    guard(|| copy_out(&moments.as_ref().ok_or_else(|| null("moments"))?.set.a3, out, len))
}

/// Recovers the image coefficients and density from `moments`, keeping the
/// best of `starts` random starts. `sigma` is the noise standard deviation;
/// `case` is a `Mtd2dCase` value.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mtd2d_recover(
    basis: *const Mtd2dBasis,
    moments: *const Mtd2dMoments,
    sigma: f64,
    case: i32,
    starts: usize,
    seed: u64,
    gamma_init: f64,
    out: *mut *mut Mtd2dRecovery,
) -> Mtd2dStatus {
    guard(|| {
        let b = basis.as_ref().ok_or_else(|| null("basis"))?;
        let m = moments.as_ref().ok_or_else(|| null("moments"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if starts == 0 || !(gamma_init > 0.0 && gamma_init < 1.0) {
            return Err(invalid(format!("starts {starts}, gamma_init {gamma_init}")));
        }
        let knowledge = match case {
            c if c == Mtd2dCase::Approximated as i32 => SeparationKnowledge::Approximated {
                surrogate_side: m.set.side,
            },
            c if c == Mtd2dCase::Ignored as i32 => SeparationKnowledge::Ignored,
            c => return Err(invalid(format!("unknown case {c}"))),
        };
        let opts = RecoveryOptions {
            starts,
            seed,
            gamma_init,
            ..RecoveryOptions::default()
        };
        let result = recover(&b.fv, &m.set, sigma, &knowledge, &opts).map_err(fail)?;
        *out = Box::into_raw(Box::new(Mtd2dRecovery { result }));
        Ok(())
    })
}

/// # Safety
/// `recovery` must come from `mtd2d_recover`. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_recovery_free(recovery: *mut Mtd2dRecovery) {
    if !recovery.is_null() {
        drop(Box::from_raw(recovery));
    }
}

/// Estimated density, NaN for null.
///
/// # Safety
/// `recovery` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_recovery_gamma(recovery: *const Mtd2dRecovery) -> f64 {
    recovery.as_ref().map_or(f64::NAN, |r| r.result.gamma)
}

/// Final objective value, NaN for null.
///
/// # Safety
/// `recovery` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_recovery_objective(recovery: *const Mtd2dRecovery) -> f64 {
    recovery.as_ref().map_or(f64::NAN, |r| r.result.objective)
}

/// 1 when the kept start reported a failure (stage-one divergence), else 0.
///
/// # Safety
/// `recovery` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_recovery_failed(recovery: *const Mtd2dRecovery) -> i32 {
    recovery.as_ref().map_or(1, |r| i32::from(r.result.failure.is_some()))
}

/// Copies the estimated coefficients.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_recovery_coefficients(
    recovery: *const Mtd2dRecovery,
    out: *mut f64,
    len: usize,
) -> Mtd2dStatus {
    guard(|| write_coefficients(&recovery.as_ref().ok_or_else(|| null("recovery"))?.result.alpha(), out, len))
}

/// Rotation-aligned relative error `min_phi |truth - R_phi est| / |truth|`.
///
/// # Safety
/// `truth` and `estimate` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtd2d_relative_error(
    basis: *const Mtd2dBasis,
    truth: *const f64,
    estimate: *const f64,
    len: usize,
    out: *mut f64,
) -> Mtd2dStatus {
    guard(|| {
        let b = basis.as_ref().ok_or_else(|| null("basis"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = coefficients(b, truth, len)?;
        let e = coefficients(b, estimate, len)?;
        *out = relative_error_alpha(&b.fv.tables.spec, &t, &e).map_err(fail)?;
        Ok(())
    })
}
