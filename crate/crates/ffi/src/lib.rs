//! C ABI over the `kunary` library.
//!
//! Every function returns a [`KunaryStatus`]; results are written through
//! out-pointers. On failure a message is kept per thread and can be read
//! with [`kunary_last_error`]. Handles are opaque and must be released with
//! the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use kunary::dynamics::{default_step, integrate_slow_ode};
use kunary::entropy::entropy_f;
use kunary::equilibrium::{fast_equilibrium_map, reduce_to_slow, solve_invariant};
use kunary::io::parse_network;
use kunary::simulate::{scale_trajectory, simulate, time_average, ScaledTrajectory, Trajectory};
use kunary::{CrnError, CrnSpec, State};

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KunaryStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    NonIrreducible = 4,
    BadArity = 5,
    NegativeRate = 6,
    Malformed = 7,
    Overflow = 8,
    SingularSystem = 9,
    NoConvergence = 10,
    NoSlowSpecies = 11,
    EmptyFastSet = 12,
    DimensionMismatch = 13,
    InvalidArgument = 14,
    NonPositive = 15,
    EventBudgetExceeded = 16,
    BufferTooSmall = 17,
    Io = 18,
    Other = 98,
    Panic = 99,
}

impl From<&CrnError> for KunaryStatus {
    fn from(e: &CrnError) -> Self {
        use CrnError::*;
        match e {
            Parse { .. } => KunaryStatus::Parse,
            NonIrreducible(_) => KunaryStatus::NonIrreducible,
            BadArity { .. } => KunaryStatus::BadArity,
            NegativeRate { .. } => KunaryStatus::NegativeRate,
            TooManySpecies { .. } | Malformed(_) => KunaryStatus::Malformed,
            Overflow { .. } => KunaryStatus::Overflow,
            SingularSystem => KunaryStatus::SingularSystem,
            NoConvergence { .. } => KunaryStatus::NoConvergence,
            NoSlowSpecies => KunaryStatus::NoSlowSpecies,
            EmptyFastSet => KunaryStatus::EmptyFastSet,
            DimensionMismatch { .. } => KunaryStatus::DimensionMismatch,
            InvalidArgument(_) | UnknownIndex(_) | CannotEliminateSource | EmptyWindow { .. } => {
                KunaryStatus::InvalidArgument
            }
            NonPositiveState { .. } | NonPositivePoint { .. } => KunaryStatus::NonPositive,
            EventBudgetExceeded(_) => KunaryStatus::EventBudgetExceeded,
            Io(_) => KunaryStatus::Io,
            _ => KunaryStatus::Other,
        }
    }
}

/// Opaque network handle.
pub struct KunaryNetwork {
    spec: CrnSpec,
}

/// Opaque handle to a simulated path and its scaled version.
pub struct KunaryTrajectory {
    raw: Trajectory,
    scaled: ScaledTrajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(KunaryStatus, String);

impl From<CrnError> for Failure {
    fn from(e: CrnError) -> Self {
        Failure(KunaryStatus::from(&e), e.to_string())
    }
}

fn fail<T>(status: KunaryStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KunaryStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            KunaryStatus::Ok
        }
        Ok(Err(Failure(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            KunaryStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    if p.is_null() {
        fail(KunaryStatus::NullPointer, format!("{what} is null"))
    } else {
        Ok(&*p)
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(KunaryStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(KunaryStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn copy_out(src: &[f64], dst: &mut [f64]) -> Result<(), Failure> {
    if dst.len() < src.len() {
        return fail(
            KunaryStatus::BufferTooSmall,
            format!("buffer holds {} values, {} needed", dst.len(), src.len()),
        );
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kunary_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn kunary_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a JSON network document into a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kunary_network_from_json(
    json: *const c_char,
    out: *mut *mut KunaryNetwork,
) -> KunaryStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(KunaryStatus::NullPointer, "json and out must be non-null");
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(KunaryStatus::InvalidUtf8, e.to_string()))?;
        let spec = parse_network(text)?;
        *out = Box::into_raw(Box::new(KunaryNetwork { spec }));
        Ok(())
    })
}

/// Releases a network handle; null is ignored.
///
/// # Safety
/// `net` must come from [`kunary_network_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kunary_network_free(net: *mut KunaryNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of species `n`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kunary_network_species(
    net: *const KunaryNetwork,
    out: *mut usize,
) -> KunaryStatus {
    guard(|| {
        let net = deref(net, "net")?;
        if out.is_null() {
            return fail(KunaryStatus::NullPointer, "out is null");
        }
        *out = net.spec.n();
        Ok(())
    })
}

/// Invariant vector `z` and its roots `ℓ` (each of length `n`), plus the
/// balance residual.
///
/// # Safety
/// `z_out` and `ell_out` must hold `len` doubles; `residual_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn kunary_equilibrium(
    net: *const KunaryNetwork,
    z_out: *mut f64,
    ell_out: *mut f64,
    len: usize,
    residual_out: *mut f64,
) -> KunaryStatus {
    guard(|| {
        let net = deref(net, "net")?;
        let sol = solve_invariant(&net.spec)?;
        copy_out(&sol.z, slice_mut(z_out, len, "z_out")?)?;
        copy_out(&sol.ell, slice_mut(ell_out, len, "ell_out")?)?;
        if !residual_out.is_null() {
            *residual_out = sol.residual;
        }
        Ok(())
    })
}

/// Eliminates all fast species. Writes the surviving labels (starting with
/// 0) and the row-major rate matrix. `dim_out` always receives the
/// dimension, so a call with `cap = 0` can be used to size the buffers
/// (`labels` needs `dim`, `rates` needs `dim * dim`).
///
/// # Safety
/// Buffers must hold `cap` labels and `cap * cap` rates.
#[no_mangle]
pub unsafe extern "C" fn kunary_reduce_to_slow(
    net: *const KunaryNetwork,
    labels: *mut usize,
    rates: *mut f64,
    cap: usize,
    dim_out: *mut usize,
) -> KunaryStatus {
    guard(|| {
        let net = deref(net, "net")?;
        if dim_out.is_null() {
            return fail(KunaryStatus::NullPointer, "dim_out is null");
        }
        let red = reduce_to_slow(&net.spec)?;
        let m = red.dim();
        *dim_out = m;
        if cap < m {
            return fail(KunaryStatus::BufferTooSmall, format!("reduced dimension is {m}"));
        }
        slice_mut(labels, m, "labels")?.copy_from_slice(red.labels());
        copy_out(red.rates(), slice_mut(rates, m * m, "rates")?)?;
        Ok(())
    })
}

/// Fast-equilibrium map `L(y)`; `y` follows the increasing order of the
/// arity-one species and `ell_out` that of the others.
///
/// # Safety
/// `y` must hold `y_len` doubles and `ell_out` `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn kunary_fast_map(
    net: *const KunaryNetwork,
    y: *const f64,
    y_len: usize,
    ell_out: *mut f64,
    len: usize,
) -> KunaryStatus {
    guard(|| {
        let net = deref(net, "net")?;
        let l = fast_equilibrium_map(&net.spec, slice(y, y_len, "y")?)?;
        copy_out(&l.ell, slice_mut(ell_out, len, "ell_out")?)
    })
}

/// Endpoint of the slow ODE started from `alpha` (arity-one species only).
/// `h <= 0` selects the default step `10⁻³ T`.
///
/// # Safety
/// `alpha` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn kunary_slow_ode_endpoint(
    net: *const KunaryNetwork,
    alpha: *const f64,
    len: usize,
    t_end: f64,
    h: f64,
    out: *mut f64,
) -> KunaryStatus {
    guard(|| {
        let net = deref(net, "net")?;
        let h = if h > 0.0 { h } else { default_step(t_end) };
        let path = integrate_slow_ode(&net.spec, slice(alpha, len, "alpha")?, t_end, h)?;
        copy_out(path.endpoint(), slice_mut(out, len, "out")?)
    })
}

/// Relative entropy `F(z)` of the network's rate matrix at `z` (length `n`).
///
/// # Safety
/// `z` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kunary_entropy(
    net: *const KunaryNetwork,
    z: *const f64,
    len: usize,
    out: *mut f64,
) -> KunaryStatus {
    guard(|| {
        let net = deref(net, "net")?;
        if out.is_null() {
            return fail(KunaryStatus::NullPointer, "out is null");
        }
        *out = entropy_f(net.spec.kappa(), slice(z, len, "z")?)?;
        Ok(())
    })
}

/// Simulates on `[0, t_end]` from counts `x0` (length `n`) and returns a new
/// trajectory handle. Deterministic in `seed`.
///
/// # Safety
/// `x0` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kunary_simulate(
    net: *const KunaryNetwork,
    big_n: u64,
    x0: *const u64,
    len: usize,
    t_end: f64,
    seed: u64,
    out: *mut *mut KunaryTrajectory,
) -> KunaryStatus {
    guard(|| {
        let net = deref(net, "net")?;
        if out.is_null() {
            return fail(KunaryStatus::NullPointer, "out is null");
        }
        let x0 = State(slice(x0, len, "x0")?.to_vec());
        let raw = simulate(&net.spec, big_n, &x0, t_end, seed)?;
        let scaled = scale_trajectory(&raw, &net.spec);
        *out = Box::into_raw(Box::new(KunaryTrajectory { raw, scaled }));
        Ok(())
    })
}

/// Releases a trajectory handle; null is ignored.
///
/// # Safety
/// `traj` must come from [`kunary_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kunary_trajectory_free(traj: *mut KunaryTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of events.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kunary_trajectory_events(
    traj: *const KunaryTrajectory,
    out: *mut usize,
) -> KunaryStatus {
    guard(|| {
        let t = deref(traj, "traj")?;
        if out.is_null() {
            return fail(KunaryStatus::NullPointer, "out is null");
        }
        *out = t.raw.len();
        Ok(())
    })
}

/// Counts at the horizon.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn kunary_trajectory_final_state(
    traj: *const KunaryTrajectory,
    out: *mut u64,
    len: usize,
) -> KunaryStatus {
    guard(|| {
        let t = deref(traj, "traj")?;
        let x = t.raw.final_state();
        let dst = slice_mut(out, len, "out")?;
        if dst.len() < x.len() {
            return fail(KunaryStatus::BufferTooSmall, format!("{} values needed", x.len()));
        }
        dst[..x.len()].copy_from_slice(x);
        Ok(())
    })
}

/// `(1/(t − eta)) ∫_eta^t X̄_species(s) ds` of the scaled path; `species` is
/// 1-based.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kunary_trajectory_time_average(
    traj: *const KunaryTrajectory,
    species: usize,
    eta: f64,
    t: f64,
    out: *mut f64,
) -> KunaryStatus {
    guard(|| {
        let tr = deref(traj, "traj")?;
        if out.is_null() {
            return fail(KunaryStatus::NullPointer, "out is null");
        }
        *out = time_average(&tr.scaled, species, eta, t)?;
        Ok(())
    })
}
