//! C interface.
//!
//! Every function returns an [`RflstdStatus`]. On failure the message is kept in
//! a thread-local slot readable through [`rflstd_last_error`]. Handles are
//! opaque and must be released with their `_free` function; strings returned by
//! the library must be released with [`rflstd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::size_t;
use nalgebra::DVector;
use num_complex::Complex64;

use rflstd::features::{phi_closed_form, Activation};
use rflstd::mrp::{gridworld_mrp, stationary_distribution, synthetic_ergodic_mrp, value_function, MarkovRewardProcess};
use rflstd::sweep::{self, SweepConfig};
use rflstd::theory::{delta_fixed_point, DeltaOptions, Spectrum};
use rflstd::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RflstdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    Config = 4,
    Numerical = 5,
    Convergence = 6,
    Assumption = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
    IllConditioned = 11,
    Other = 12,
}

/// Opaque Markov reward process.
pub struct RflstdMrp(MarkovRewardProcess);

/// Opaque sweep configuration.
pub struct RflstdConfig(SweepConfig);

/// Metrics at one `(ratio, λ, seed)` point.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RflstdPointMetrics {
    pub num_features: size_t,
    pub m: size_t,
    pub n: size_t,
    pub empirical_msbe: f64,
    pub true_msbe: f64,
    pub msve: f64,
    pub delta: f64,
    pub theory_empirical_msbe: f64,
    pub theory_true_msbe: f64,
    pub theory_msve: f64,
    /// 1 when the instance fit succeeded, 0 otherwise.
    pub instance_ok: i32,
    /// 1 when the theory evaluation succeeded, 0 otherwise.
    pub theory_ok: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RflstdStatus {
    match e {
        Error::Parameter(_) => RflstdStatus::InvalidParameter,
        Error::Config(_) => RflstdStatus::Config,
        Error::Numerical(_) | Error::Consistency(_) => RflstdStatus::Numerical,
        Error::Convergence { .. } => RflstdStatus::Convergence,
        Error::Assumption(_) => RflstdStatus::Assumption,
        Error::IllConditioned { .. } => RflstdStatus::IllConditioned,
        Error::Io(_) => RflstdStatus::Io,
        Error::Json(_) | Error::Csv(_) => RflstdStatus::Other,
    }
}

struct Failure(RflstdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RflstdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RflstdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside rflstd".into());
            RflstdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RflstdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(RflstdStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn write_vector(v: &DVector<f64>, out: *mut f64, len: size_t) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < v.len() {
        return Err(Failure(
            RflstdStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", v.len()),
        ));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
    Ok(())
}

fn activation_of(code: i32) -> Result<Activation, Failure> {
    Activation::ALL
        .get(usize::try_from(code).unwrap_or(usize::MAX))
        .copied()
        .ok_or_else(|| {
            Failure(
                RflstdStatus::InvalidParameter,
                format!("unknown activation code {code}"),
            )
        })
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn rflstd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rflstd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_synthetic(
    num_states: size_t,
    state_dim: size_t,
    discount: f64,
    seed: u64,
    out: *mut *mut RflstdMrp,
) -> RflstdStatus {
    guard(|| {
        let mrp = synthetic_ergodic_mrp(num_states, state_dim, discount, seed)?;
        write_out(out, Box::into_raw(Box::new(RflstdMrp(mrp))), "out")
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_gridworld(
    side: size_t,
    state_dim: size_t,
    discount: f64,
    seed: u64,
    out: *mut *mut RflstdMrp,
) -> RflstdStatus {
    guard(|| {
        let mrp = gridworld_mrp(side, state_dim, discount, seed)?;
        write_out(out, Box::into_raw(Box::new(RflstdMrp(mrp))), "out")
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_from_json(json: *const c_char, out: *mut *mut RflstdMrp) -> RflstdStatus {
    guard(|| {
        let mrp = MarkovRewardProcess::from_json(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(RflstdMrp(mrp))), "out")
    })
}

/// Serializes the MRP; release the result with [`rflstd_string_free`].
///
/// # Safety
/// `mrp` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_to_json(mrp: *const RflstdMrp, out: *mut *mut c_char) -> RflstdStatus {
    guard(|| {
        let mrp = mrp.as_ref().ok_or_else(|| null("mrp"))?;
        let s = CString::new(mrp.0.to_json()?).map_err(|e| Failure(RflstdStatus::Other, e.to_string()))?;
        write_out(out, s.into_raw(), "out")
    })
}

/// # Safety
/// `mrp` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_num_states(mrp: *const RflstdMrp) -> size_t {
    mrp.as_ref().map_or(0, |m| m.0.num_states())
}

/// # Safety
/// `mrp` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_free(mrp: *mut RflstdMrp) {
    if !mrp.is_null() {
        drop(Box::from_raw(mrp));
    }
}

/// Writes the stationary distribution into `out[0..num_states]`.
///
/// # Safety
/// `mrp` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_stationary(mrp: *const RflstdMrp, out: *mut f64, len: size_t) -> RflstdStatus {
    guard(|| {
        let mrp = mrp.as_ref().ok_or_else(|| null("mrp"))?;
        write_vector(stationary_distribution(&mrp.0)?.pi(), out, len)
    })
}

/// Writes the value function into `out[0..num_states]`.
///
/// # Safety
/// `mrp` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_mrp_values(mrp: *const RflstdMrp, out: *mut f64, len: size_t) -> RflstdStatus {
    guard(|| {
        let mrp = mrp.as_ref().ok_or_else(|| null("mrp"))?;
        write_vector(&value_function(&mrp.0)?, out, len)
    })
}

/// Kernel `E[σ(wᵀa) σ(wᵀb)]`. Activation codes: 0 linear, 1 relu, 2 abs, 3 sign.
///
/// # Safety
/// `a` and `b` must be valid for `dim` reads and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_phi(
    a: *const f64,
    b: *const f64,
    dim: size_t,
    activation: i32,
    out: *mut f64,
) -> RflstdStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("input vector"));
        }
        let av = DVector::from_column_slice(std::slice::from_raw_parts(a, dim));
        let bv = DVector::from_column_slice(std::slice::from_raw_parts(b, dim));
        write_out(out, phi_closed_form(&av, &bv, activation_of(activation)?)?, "out")
    })
}

/// Solves the `δ` fixed point over the eigenvalues `re[i] + i·im[i]`
/// (`im` may be null for a real spectrum) of a compressed `m × m` operator.
///
/// # Safety
/// `re` (and `im` when non-null) must be valid for `len` reads; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_delta(
    re: *const f64,
    im: *const f64,
    len: size_t,
    m: size_t,
    num_features: size_t,
    lambda: f64,
    out: *mut f64,
) -> RflstdStatus {
    guard(|| {
        if re.is_null() {
            return Err(null("re"));
        }
        let re = std::slice::from_raw_parts(re, len);
        let eigs: Vec<Complex64> = if im.is_null() {
            re.iter().map(|&r| Complex64::new(r, 0.0)).collect()
        } else {
            let im = std::slice::from_raw_parts(im, len);
            re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
        };
        let spectrum = Spectrum::from_eigenvalues(eigs, m)?;
        let sol = delta_fixed_point(&spectrum, num_features, lambda, &DeltaOptions::default())?;
        write_out(out, sol.delta, "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_config_from_file(path: *const c_char, out: *mut *mut RflstdConfig) -> RflstdStatus {
    guard(|| {
        let cfg = SweepConfig::from_file(Path::new(str_arg(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(RflstdConfig(cfg))), "out")
    })
}

/// # Safety
/// `toml` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_config_from_str(toml: *const c_char, out: *mut *mut RflstdConfig) -> RflstdStatus {
    guard(|| {
        let cfg = SweepConfig::from_toml_str(str_arg(toml, "toml")?)?;
        write_out(out, Box::into_raw(Box::new(RflstdConfig(cfg))), "out")
    })
}

/// # Safety
/// `cfg` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rflstd_config_free(cfg: *mut RflstdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Fits one instance and evaluates the theory at `N = round(ratio · m)`.
///
/// # Safety
/// `cfg` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rflstd_point_evaluate(
    cfg: *const RflstdConfig,
    ratio: f64,
    lambda: f64,
    seed: u64,
    out: *mut RflstdPointMetrics,
) -> RflstdStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let prep = sweep::prepare(cfg)?;
        let big_n = sweep::features_for_ratio(ratio, prep.ops.m());
        let mut m = RflstdPointMetrics {
            num_features: big_n,
            m: prep.ops.m(),
            n: prep.ops.n(),
            empirical_msbe: f64::NAN,
            true_msbe: f64::NAN,
            msve: f64::NAN,
            delta: f64::NAN,
            theory_empirical_msbe: f64::NAN,
            theory_true_msbe: f64::NAN,
            theory_msve: f64::NAN,
            instance_ok: 0,
            theory_ok: 0,
        };
        let mut errors = Vec::new();
        match sweep::evaluate_instance(&prep, cfg, big_n, lambda, seed) {
            Ok(i) => {
                m.empirical_msbe = i.empirical_msbe;
                m.true_msbe = i.true_msbe;
                m.msve = i.msve;
                m.instance_ok = 1;
            }
            Err(e) => errors.push(format!("instance: {e}")),
        }
        match sweep::evaluate_theory(&prep, big_n, lambda) {
            Ok(t) => {
                m.delta = t.delta;
                m.theory_empirical_msbe = t.empirical_msbe.value;
                m.theory_true_msbe = t.true_msbe.value;
                m.theory_msve = t.msve.value;
                m.theory_ok = 1;
            }
            Err(e) => errors.push(format!("theory: {e}")),
        }
        if !errors.is_empty() {
            set_error(errors.join("; "));
        }
        write_out(out, m, "out")
    })
}

/// Runs a sweep and writes `sweep.csv` and `summary.json` into `out_dir`.
/// Returns [`RflstdStatus::Numerical`] when some grid point failed on every instance.
///
/// # Safety
/// `cfg` must be a live handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rflstd_sweep_run(
    cfg: *const RflstdConfig,
    out_dir: *const c_char,
    jobs: size_t,
) -> RflstdStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let dir = str_arg(out_dir, "out_dir")?;
        let result = sweep::run_sweep(cfg, jobs, sweep::seed_offset_from_env()?)?;
        result.write_to_dir(Path::new(dir))?;
        match result.hard_failures().first() {
            None => Ok(()),
            Some(p) => Err(Failure(
                RflstdStatus::Numerical,
                format!("every instance failed at ratio {} lambda {:e}", p.ratio, p.lambda),
            )),
        }
    })
}
