//! C ABI for the msnar library.
//!
//! Objects cross the boundary as opaque handles created by `msnar_*` constructors
//! and released with the matching `*_free`. Every fallible function returns an
//! `MsnarStatus`; on failure `msnar_last_error` describes the cause for the
//! calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use msnar::kernel::{KernelConfig, KernelFamily};
use msnar::rm::{run_restoration_estimation, RmConfig, StepSchedule};
use msnar::{
    check_stability, nw_estimate, simulate, Error, InitialValue, ModelSpec, ThetaField, Trajectory,
};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsnarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Model specification handle.
pub struct MsnarModel(ModelSpec);

/// Observation sequence, with regimes when known.
pub struct MsnarTrajectory(Trajectory);

/// Per-regime regression estimates on a grid.
pub struct MsnarThetaField(ThetaField);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: MsnarStatus, msg: impl Into<String>) -> MsnarStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> MsnarStatus {
    let status = if e.is_config_error() {
        MsnarStatus::InvalidArgument
    } else {
        MsnarStatus::Numerical
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> MsnarStatus) -> MsnarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MsnarStatus::Panic, "internal panic"),
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(MsnarStatus::NullPointer, concat!("null pointer: ", stringify!($p)));
        })+
    };
}

/// Message for the most recent failure on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msnar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// The two-regime bump/logistic preset.
#[no_mangle]
pub unsafe extern "C" fn msnar_model_preset(out: *mut *mut MsnarModel) -> MsnarStatus {
    non_null!(out);
    guard(|| {
        put(out, MsnarModel(ModelSpec::bump_logistic()));
        MsnarStatus::Ok
    })
}

/// Parses a model from its JSON description.
#[no_mangle]
pub unsafe extern "C" fn msnar_model_from_json(
    json: *const c_char,
    out: *mut *mut MsnarModel,
) -> MsnarStatus {
    non_null!(json, out);
    guard(|| {
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(MsnarStatus::InvalidArgument, "model JSON is not UTF-8"),
        };
        match serde_json::from_str::<ModelSpec>(text) {
            Ok(m) => {
                put(out, MsnarModel(m));
                MsnarStatus::Ok
            }
            Err(e) => fail(MsnarStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn msnar_model_free(model: *mut MsnarModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn msnar_model_regimes(
    model: *const MsnarModel,
    out: *mut usize,
) -> MsnarStatus {
    non_null!(model, out);
    *out = (*model).0.m();
    MsnarStatus::Ok
}

/// Spectral radius of the order-`s` moment matrix and the overall verdict
/// (`*stable` is 1 when both stability conditions hold).
#[no_mangle]
pub unsafe extern "C" fn msnar_check_stability(
    model: *const MsnarModel,
    s: f64,
    spectral_radius: *mut f64,
    stable: *mut c_int,
) -> MsnarStatus {
    non_null!(model, spectral_radius, stable);
    guard(|| match check_stability(&(*model).0, s) {
        Ok(r) => {
            *spectral_radius = r.spectral_radius_qs;
            *stable = c_int::from(r.stable);
            MsnarStatus::Ok
        }
        Err(e) => from_error(e),
    })
}

/// Simulates `n` transitions after discarding `burn_in` steps started at zero.
#[no_mangle]
pub unsafe extern "C" fn msnar_simulate(
    model: *const MsnarModel,
    n: usize,
    seed: u64,
    burn_in: usize,
    out: *mut *mut MsnarTrajectory,
) -> MsnarStatus {
    non_null!(model, out);
    guard(
        || match simulate(&(*model).0, n, InitialValue::Stationary, seed, burn_in) {
            Ok(t) => {
                put(out, MsnarTrajectory(t));
                MsnarStatus::Ok
            }
            Err(e) => from_error(e),
        },
    )
}

/// Builds a trajectory from `len` observations. `regimes` may be null; otherwise
/// it holds `len - 1` zero-based labels for steps `1..len`.
#[no_mangle]
pub unsafe extern "C" fn msnar_trajectory_from_values(
    y: *const f64,
    len: usize,
    regimes: *const usize,
    out: *mut *mut MsnarTrajectory,
) -> MsnarStatus {
    non_null!(y, out);
    if len < 2 {
        return fail(
            MsnarStatus::InvalidArgument,
            "a trajectory needs at least two values",
        );
    }
    guard(|| {
        let values = std::slice::from_raw_parts(y, len).to_vec();
        let labels =
            (!regimes.is_null()).then(|| std::slice::from_raw_parts(regimes, len - 1).to_vec());
        match Trajectory::new(values, labels) {
            Ok(t) => {
                put(out, MsnarTrajectory(t));
                MsnarStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn msnar_trajectory_free(traj: *mut MsnarTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of observations `n + 1`.
#[no_mangle]
pub unsafe extern "C" fn msnar_trajectory_len(
    traj: *const MsnarTrajectory,
    out: *mut usize,
) -> MsnarStatus {
    non_null!(traj, out);
    *out = (*traj).0.y.len();
    MsnarStatus::Ok
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, capacity: usize) -> MsnarStatus {
    if capacity < src.len() {
        return fail(
            MsnarStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    MsnarStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn msnar_trajectory_values(
    traj: *const MsnarTrajectory,
    out: *mut f64,
    capacity: usize,
) -> MsnarStatus {
    non_null!(traj, out);
    copy_out(&(*traj).0.y, out, capacity)
}

/// Zero-based regimes of steps `1..len`; fails when they are hidden.
#[no_mangle]
pub unsafe extern "C" fn msnar_trajectory_regimes(
    traj: *const MsnarTrajectory,
    out: *mut usize,
    capacity: usize,
) -> MsnarStatus {
    non_null!(traj, out);
    match &(*traj).0.x {
        Some(x) => copy_out(x, out, capacity),
        None => fail(MsnarStatus::InvalidArgument, "trajectory has no regimes"),
    }
}

fn kernel_config(traj: &Trajectory, bandwidth: f64) -> Result<KernelConfig, Error> {
    let h = (bandwidth > 0.0).then_some(bandwidth);
    KernelConfig::for_trajectory(traj, KernelFamily::Gaussian, h)
}

/// Complete-data estimate on the default grid. A non-positive `bandwidth`
/// selects the default rule.
#[no_mangle]
pub unsafe extern "C" fn msnar_nw_estimate(
    traj: *const MsnarTrajectory,
    m: usize,
    bandwidth: f64,
    out: *mut *mut MsnarThetaField,
) -> MsnarStatus {
    non_null!(traj, out);
    guard(|| {
        let t = &(*traj).0;
        match kernel_config(t, bandwidth).and_then(|kc| nw_estimate(t, m, &kc)) {
            Ok(f) => {
                put(out, MsnarThetaField(f));
                MsnarStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Restoration-estimation with hidden regimes; returns the averaged estimate.
/// Any regimes stored in the trajectory are ignored.
#[no_mangle]
pub unsafe extern "C" fn msnar_rm_estimate(
    traj: *const MsnarTrajectory,
    m: usize,
    seed: u64,
    warmup: usize,
    iterations: usize,
    bandwidth: f64,
    out: *mut *mut MsnarThetaField,
) -> MsnarStatus {
    non_null!(traj, out);
    guard(|| {
        let t = (*traj).0.hidden();
        let result = kernel_config(&t, bandwidth).and_then(|kc| {
            let mut config = RmConfig::new(m, kc, seed);
            config.schedule = StepSchedule { warmup, iterations };
            run_restoration_estimation(&t, &config, seed)
        });
        match result {
            Ok(trace) => {
                put(out, MsnarThetaField(trace.theta_bar));
                MsnarStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn msnar_field_free(field: *mut MsnarThetaField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

#[no_mangle]
pub unsafe extern "C" fn msnar_field_grid_len(
    field: *const MsnarThetaField,
    out: *mut usize,
) -> MsnarStatus {
    non_null!(field, out);
    *out = (*field).0.grid.len();
    MsnarStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn msnar_field_regimes(
    field: *const MsnarThetaField,
    out: *mut usize,
) -> MsnarStatus {
    non_null!(field, out);
    *out = (*field).0.m();
    MsnarStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn msnar_field_grid(
    field: *const MsnarThetaField,
    out: *mut f64,
    capacity: usize,
) -> MsnarStatus {
    non_null!(field, out);
    copy_out(&(*field).0.grid, out, capacity)
}

/// Estimated regression values of zero-based `regime` along the grid.
#[no_mangle]
pub unsafe extern "C" fn msnar_field_theta(
    field: *const MsnarThetaField,
    regime: usize,
    out: *mut f64,
    capacity: usize,
) -> MsnarStatus {
    non_null!(field, out);
    let field = &*field;
    match field.0.theta.get(regime) {
        Some(row) => copy_out(row, out, capacity),
        None => fail(
            MsnarStatus::InvalidArgument,
            format!("regime {regime} out of range"),
        ),
    }
}
