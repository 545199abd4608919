//! C ABI for the downlink power-allocation toolkit.
//!
//! Handles are opaque pointers created and destroyed here; every function
//! returns a [`DlpStatus`] and never unwinds across the boundary. On any
//! failure the per-thread message retrieved by [`dlp_last_error_message`]
//! describes what went wrong.
//!
//! Functions that read or write caller-supplied pointers are `unsafe`; each
//! documents its pointer contract under `# Safety`. All of them check for
//! null, but cannot defend against dangling or undersized buffers.

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use dlpower_core::channel::{mmse_estimate, sample_channels};
use dlpower_core::geometry::{drop_ues, NetworkConfig};
use dlpower_core::nn::{self, MlpModel};
use dlpower_core::pipeline::derive_seed;
use dlpower_core::power::{solve, SolverOptions, Strategy};
use dlpower_core::precoding::{compute_precoders, Precoder};
use dlpower_core::se::{estimate_gains, GainTable};
use dlpower_core::Error;

/// Result codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlpStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments or configuration were rejected.
    InvalidArgument = 2,
    /// A numeric routine failed (non-finite values, factorization).
    NumericFailure = 3,
    /// A solver did not produce a valid allocation.
    SolverFailure = 4,
    /// File or format error.
    IoFailure = 5,
    /// A panic was caught at the boundary; state may be stale.
    InternalPanic = 6,
}

/// Opaque network/scenario configuration handle.
pub struct DlpConfig(NetworkConfig);

/// Opaque Monte-Carlo gain table handle.
pub struct DlpGainTable(GainTable);

/// Opaque trained-model handle.
pub struct DlpModel(MlpModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> DlpStatus {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::Shape(_) => DlpStatus::InvalidArgument,
        Error::Numeric(_) | Error::DegenerateGain { .. } => DlpStatus::NumericFailure,
        Error::Solver(_) => DlpStatus::SolverFailure,
        Error::Format(_) | Error::Io(_) => DlpStatus::IoFailure,
    }
}

fn fail(err: &Error) -> DlpStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Run `body` with panics converted to `InternalPanic`.
fn guarded<F: FnOnce() -> DlpStatus>(body: F) -> DlpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic caught at the C boundary");
            DlpStatus::InternalPanic
        }
    }
}

/// Message describing this thread's most recent failure. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn dlp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ── Configuration ──

/// Create a configuration with the scenario defaults (L=4, K=5, M=100).
/// Free with `dlp_config_free`.
#[no_mangle]
pub extern "C" fn dlp_config_default() -> *mut DlpConfig {
    Box::into_raw(Box::new(DlpConfig(NetworkConfig::default())))
}

/// Parse a configuration from `key = value` text. On success stores a new
/// handle in `out`.
///
/// # Safety
///
/// `text` must point to a NUL-terminated string and `out` must be valid for
/// a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dlp_config_from_text(
    text: *const c_char,
    out: *mut *mut DlpConfig,
) -> DlpStatus {
    guarded(|| {
        if text.is_null() || out.is_null() {
            set_error("text and out must be non-null");
            return DlpStatus::NullArgument;
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("config text is not valid UTF-8");
                return DlpStatus::InvalidArgument;
            }
        };
        match NetworkConfig::from_text(text) {
            Ok(cfg) => {
                unsafe { *out = Box::into_raw(Box::new(DlpConfig(cfg))) };
                DlpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of cells (L) and UEs per cell (K) of a configuration.
///
/// # Safety
///
/// `config` must be a live handle from this library; `l_out` and `k_out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dlp_config_dims(
    config: *const DlpConfig,
    l_out: *mut usize,
    k_out: *mut usize,
) -> DlpStatus {
    guarded(|| {
        if config.is_null() || l_out.is_null() || k_out.is_null() {
            set_error("config, l_out, and k_out must be non-null");
            return DlpStatus::NullArgument;
        }
        let cfg = unsafe { &(*config).0 };
        unsafe {
            *l_out = cfg.l;
            *k_out = cfg.k;
        }
        DlpStatus::Ok
    })
}

/// Downlink per-cell power budget (mW) of a configuration.
///
/// # Safety
///
/// `config` must be a live handle from this library; `out` must be valid
/// for a write.
#[no_mangle]
pub unsafe extern "C" fn dlp_config_p_max_mw(
    config: *const DlpConfig,
    out: *mut f64,
) -> DlpStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            set_error("config and out must be non-null");
            return DlpStatus::NullArgument;
        }
        unsafe { *out = (*config).0.p_dl_max_mw() };
        DlpStatus::Ok
    })
}

/// Destroy a configuration handle. Null is ignored.
///
/// # Safety
///
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlp_config_free(config: *mut DlpConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

// ── Gain tables ──

/// Precoder selector: 0 = MR, 1 = M-MMSE.
fn precoder_of(raw: i32) -> Option<Precoder> {
    match raw {
        0 => Some(Precoder::Mr),
        1 => Some(Precoder::Mmse),
        _ => None,
    }
}

/// Strategy selector: 0 = max-min, 1 = max-prod.
fn strategy_of(raw: i32) -> Option<Strategy> {
    match raw {
        0 => Some(Strategy::MaxMin),
        1 => Some(Strategy::MaxProd),
        _ => None,
    }
}

/// Simulate one random UE drop under `config` and average the Monte-Carlo
/// signal/interference gains over `n_real` fading realizations with the
/// chosen precoder (0 = MR, 1 = M-MMSE). Deterministic given `seed`.
///
/// # Safety
///
/// `config` must be a live handle from this library; `out` must be valid
/// for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dlp_gain_table_simulate(
    config: *const DlpConfig,
    precoder: i32,
    n_real: usize,
    seed: u64,
    out: *mut *mut DlpGainTable,
) -> DlpStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            set_error("config and out must be non-null");
            return DlpStatus::NullArgument;
        }
        let Some(precoder) = precoder_of(precoder) else {
            set_error("precoder must be 0 (MR) or 1 (M-MMSE)");
            return DlpStatus::InvalidArgument;
        };
        let cfg = unsafe { &(*config).0 };
        let result = (|| {
            let net = drop_ues(cfg, seed)?;
            let channels = sample_channels(&net, n_real, derive_seed(seed, 1))?;
            let estimates = mmse_estimate(&net, &channels, derive_seed(seed, 2))?;
            let w = compute_precoders(&net, &estimates, precoder)?;
            estimate_gains(&channels, &w, cfg)
        })();
        match result {
            Ok(table) => {
                unsafe { *out = Box::into_raw(Box::new(DlpGainTable(table))) };
                DlpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Parse a gain table from its CSV serialization.
///
/// # Safety
///
/// `text` must point to a NUL-terminated string and `out` must be valid for
/// a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dlp_gain_table_from_csv(
    text: *const c_char,
    out: *mut *mut DlpGainTable,
) -> DlpStatus {
    guarded(|| {
        if text.is_null() || out.is_null() {
            set_error("text and out must be non-null");
            return DlpStatus::NullArgument;
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("gain CSV is not valid UTF-8");
                return DlpStatus::InvalidArgument;
            }
        };
        match GainTable::from_csv(text) {
            Ok(table) => {
                unsafe { *out = Box::into_raw(Box::new(DlpGainTable(table))) };
                DlpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Serialize a gain table to CSV. The returned string must be released with
/// `dlp_string_free`.
///
/// # Safety
///
/// `table` must be a live handle from this library; `out` must be valid for
/// a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dlp_gain_table_to_csv(
    table: *const DlpGainTable,
    out: *mut *mut c_char,
) -> DlpStatus {
    guarded(|| {
        if table.is_null() || out.is_null() {
            set_error("table and out must be non-null");
            return DlpStatus::NullArgument;
        }
        let csv = unsafe { &(*table).0 }.to_csv();
        match CString::new(csv) {
            Ok(s) => {
                unsafe { *out = s.into_raw() };
                DlpStatus::Ok
            }
            Err(_) => {
                set_error("gain CSV contained an interior NUL");
                DlpStatus::NumericFailure
            }
        }
    })
}

/// Cell count (L) and per-cell UE count (K) of a gain table.
///
/// # Safety
///
/// `table` must be a live handle from this library; `l_out` and `k_out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dlp_gain_table_dims(
    table: *const DlpGainTable,
    l_out: *mut usize,
    k_out: *mut usize,
) -> DlpStatus {
    guarded(|| {
        if table.is_null() || l_out.is_null() || k_out.is_null() {
            set_error("table, l_out, and k_out must be non-null");
            return DlpStatus::NullArgument;
        }
        let g = unsafe { &(*table).0 };
        unsafe {
            *l_out = g.l;
            *k_out = g.k;
        }
        DlpStatus::Ok
    })
}

/// Destroy a gain-table handle. Null is ignored.
///
/// # Safety
///
/// `table` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlp_gain_table_free(table: *mut DlpGainTable) {
    if !table.is_null() {
        drop(unsafe { Box::from_raw(table) });
    }
}

/// Release a string returned by this library.
///
/// # Safety
///
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

// ── Solvers ──

/// Solve a power-allocation problem on a gain table. `strategy` is 0
/// (max-min SE) or 1 (max-prod SINR); `rho_out` must hold `L*K` doubles and
/// receives the optimal per-UE powers (mW). `objective_out` and
/// `converged_out` may be null if not wanted.
///
/// # Safety
///
/// `table` must be a live handle from this library and `rho_out` must point
/// to at least `L*K` writable doubles; `objective_out` and `converged_out`
/// must each be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dlp_solve(
    table: *const DlpGainTable,
    strategy: i32,
    p_max_mw: f64,
    rho_out: *mut f64,
    objective_out: *mut f64,
    converged_out: *mut u8,
) -> DlpStatus {
    guarded(|| {
        if table.is_null() || rho_out.is_null() {
            set_error("table and rho_out must be non-null");
            return DlpStatus::NullArgument;
        }
        let Some(strategy) = strategy_of(strategy) else {
            set_error("strategy must be 0 (max-min) or 1 (max-prod)");
            return DlpStatus::InvalidArgument;
        };
        let g = unsafe { &(*table).0 };
        match solve(g, strategy, p_max_mw, &SolverOptions::default()) {
            Ok(alloc) => {
                let out = unsafe { std::slice::from_raw_parts_mut(rho_out, g.l * g.k) };
                out.copy_from_slice(&alloc.rho);
                if !objective_out.is_null() {
                    unsafe { *objective_out = alloc.objective };
                }
                if !converged_out.is_null() {
                    unsafe { *converged_out = alloc.converged as u8 };
                }
                DlpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

// ── Models ──

/// Load a trained model file. Free with `dlp_model_free`.
///
/// # Safety
///
/// `path` must point to a NUL-terminated string and `out` must be valid for
/// a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dlp_model_load(
    path: *const c_char,
    out: *mut *mut DlpModel,
) -> DlpStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("path and out must be non-null");
            return DlpStatus::NullArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return DlpStatus::InvalidArgument;
            }
        };
        match nn::load_model_file(Path::new(path)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(DlpModel(model))) };
                DlpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Input and output dimensions of a model (2KL and K+1).
///
/// # Safety
///
/// `model` must be a live handle from this library; `input_out` and
/// `output_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dlp_model_dims(
    model: *const DlpModel,
    input_out: *mut usize,
    output_out: *mut usize,
) -> DlpStatus {
    guarded(|| {
        if model.is_null() || input_out.is_null() || output_out.is_null() {
            set_error("model, input_out, and output_out must be non-null");
            return DlpStatus::NullArgument;
        }
        let m = unsafe { &(*model).0 };
        unsafe {
            *input_out = m.input_dim();
            *output_out = m.output_dim();
        }
        DlpStatus::Ok
    })
}

/// Predict a budget-feasible power allocation for one cell. `positions`
/// holds `n_positions` raw UE coordinates (the model's input dimension);
/// `powers_out` must hold `output_dim - 1` doubles and receives mW values
/// with sum <= `p_max_mw`.
///
/// # Safety
///
/// `model` must be a live handle from this library, `positions` must point
/// to `n_positions` readable doubles, and `powers_out` must point to at
/// least `output_dim - 1` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dlp_model_predict(
    model: *const DlpModel,
    positions: *const f64,
    n_positions: usize,
    p_max_mw: f64,
    powers_out: *mut f64,
) -> DlpStatus {
    guarded(|| {
        if model.is_null() || positions.is_null() || powers_out.is_null() {
            set_error("model, positions, and powers_out must be non-null");
            return DlpStatus::NullArgument;
        }
        let m = unsafe { &(*model).0 };
        if n_positions != m.input_dim() {
            set_error("n_positions does not match the model input dimension");
            return DlpStatus::InvalidArgument;
        }
        let pos = unsafe { std::slice::from_raw_parts(positions, n_positions) };
        match nn::predict_powers(m, pos, p_max_mw) {
            Ok(powers) => {
                let out = unsafe { std::slice::from_raw_parts_mut(powers_out, powers.len()) };
                out.copy_from_slice(&powers);
                DlpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Destroy a model handle. Null is ignored.
///
/// # Safety
///
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlp_model_free(model: *mut DlpModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Strategy name for a selector value, for diagnostics; returns a static
/// string, or null for an unknown selector.
#[no_mangle]
pub extern "C" fn dlp_strategy_name(strategy: i32) -> *const c_char {
    match strategy_of(strategy) {
        Some(Strategy::MaxMin) => c"maxmin".as_ptr(),
        Some(Strategy::MaxProd) => c"maxprod".as_ptr(),
        None => std::ptr::null(),
    }
}

/// Parse a strategy name ("maxmin" | "maxprod") to its selector; -1 if
/// unknown.
///
/// # Safety
///
/// `name` must be null or point to a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dlp_strategy_from_name(name: *const c_char) -> i32 {
    if name.is_null() {
        return -1;
    }
    let Ok(name) = unsafe { CStr::from_ptr(name) }.to_str() else {
        return -1;
    };
    match Strategy::from_str(name) {
        Ok(Strategy::MaxMin) => 0,
        Ok(Strategy::MaxProd) => 1,
        Err(_) => -1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_rejected_with_message() {
        let status = unsafe { dlp_config_from_text(std::ptr::null(), std::ptr::null_mut()) };
        assert_eq!(status, DlpStatus::NullArgument);
        let msg = unsafe { CStr::from_ptr(dlp_last_error_message()) };
        assert!(!msg.to_bytes().is_empty());
    }

    #[test]
    fn config_round_trip_and_dims() {
        unsafe {
            let text = CString::new("M = 8\nK = 2\ntau_p = 2\n").unwrap();
            let mut cfg: *mut DlpConfig = std::ptr::null_mut();
            assert_eq!(dlp_config_from_text(text.as_ptr(), &mut cfg), DlpStatus::Ok);
            let (mut l, mut k) = (0usize, 0usize);
            assert_eq!(dlp_config_dims(cfg, &mut l, &mut k), DlpStatus::Ok);
            assert_eq!((l, k), (4, 2));
            let mut p_max = 0.0;
            assert_eq!(dlp_config_p_max_mw(cfg, &mut p_max), DlpStatus::Ok);
            assert!((p_max - 1000.0).abs() < 1e-9);
            dlp_config_free(cfg);
        }
    }

    #[test]
    fn bad_config_text_reports_invalid() {
        unsafe {
            let text = CString::new("L = 3\n").unwrap(); // not a square grid
            let mut cfg: *mut DlpConfig = std::ptr::null_mut();
            let status = dlp_config_from_text(text.as_ptr(), &mut cfg);
            assert_eq!(status, DlpStatus::InvalidArgument);
            assert!(cfg.is_null());
        }
    }

    #[test]
    fn simulate_solve_and_budget() {
        unsafe {
            let text = CString::new("M = 8\nK = 2\ntau_p = 2\n").unwrap();
            let mut cfg: *mut DlpConfig = std::ptr::null_mut();
            assert_eq!(dlp_config_from_text(text.as_ptr(), &mut cfg), DlpStatus::Ok);
            let mut table: *mut DlpGainTable = std::ptr::null_mut();
            assert_eq!(
                dlp_gain_table_simulate(cfg, 1, 16, 42, &mut table),
                DlpStatus::Ok
            );
            let (mut l, mut k) = (0usize, 0usize);
            assert_eq!(dlp_gain_table_dims(table, &mut l, &mut k), DlpStatus::Ok);
            assert_eq!((l, k), (4, 2));

            let mut rho = vec![0.0f64; l * k];
            let mut objective = 0.0f64;
            let mut converged = 0u8;
            assert_eq!(
                dlp_solve(
                    table,
                    0,
                    1000.0,
                    rho.as_mut_ptr(),
                    &mut objective,
                    &mut converged
                ),
                DlpStatus::Ok
            );
            assert_eq!(converged, 1);
            assert!(objective > 0.0);
            for cell in 0..l {
                let sum: f64 = rho[cell * k..(cell + 1) * k].iter().sum();
                assert!(sum <= 1000.0 * (1.0 + 1e-9));
            }

            // determinism through the C surface
            let mut table2: *mut DlpGainTable = std::ptr::null_mut();
            assert_eq!(
                dlp_gain_table_simulate(cfg, 1, 16, 42, &mut table2),
                DlpStatus::Ok
            );
            let mut rho2 = vec![0.0f64; l * k];
            assert_eq!(
                dlp_solve(
                    table2,
                    0,
                    1000.0,
                    rho2.as_mut_ptr(),
                    std::ptr::null_mut(),
                    std::ptr::null_mut()
                ),
                DlpStatus::Ok
            );
            assert_eq!(rho, rho2);

            dlp_gain_table_free(table);
            dlp_gain_table_free(table2);
            dlp_config_free(cfg);
        }
    }

    #[test]
    fn gain_csv_round_trips_through_the_boundary() {
        unsafe {
            let text = CString::new("M = 4\nK = 2\ntau_p = 2\n").unwrap();
            let mut cfg: *mut DlpConfig = std::ptr::null_mut();
            assert_eq!(dlp_config_from_text(text.as_ptr(), &mut cfg), DlpStatus::Ok);
            let mut table: *mut DlpGainTable = std::ptr::null_mut();
            assert_eq!(
                dlp_gain_table_simulate(cfg, 0, 8, 3, &mut table),
                DlpStatus::Ok
            );
            let mut csv: *mut c_char = std::ptr::null_mut();
            assert_eq!(dlp_gain_table_to_csv(table, &mut csv), DlpStatus::Ok);
            let mut parsed: *mut DlpGainTable = std::ptr::null_mut();
            assert_eq!(dlp_gain_table_from_csv(csv, &mut parsed), DlpStatus::Ok);
            assert_eq!((*parsed).0.a, (*table).0.a);
            assert_eq!((*parsed).0.b, (*table).0.b);
            dlp_string_free(csv);
            dlp_gain_table_free(table);
            dlp_gain_table_free(parsed);
            dlp_config_free(cfg);
        }
    }

    #[test]
    fn model_load_and_predict() {
        let dir = std::env::temp_dir().join("dlp_ffi_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.dlp");
        let mut model = MlpModel::compact(4, 5, 7);
        model.input_norm = nn::Normalizer::scaling(40, 500.0);
        model.target_norm = nn::Normalizer::scaling(6, 1000.0);
        nn::save_model_file(&model, &path).unwrap();

        unsafe {
            let cpath = CString::new(path.to_str().unwrap()).unwrap();
            let mut handle: *mut DlpModel = std::ptr::null_mut();
            assert_eq!(dlp_model_load(cpath.as_ptr(), &mut handle), DlpStatus::Ok);
            let (mut din, mut dout) = (0usize, 0usize);
            assert_eq!(dlp_model_dims(handle, &mut din, &mut dout), DlpStatus::Ok);
            assert_eq!((din, dout), (40, 6));

            let positions = vec![123.0f64; 40];
            let mut powers = vec![0.0f64; 5];
            assert_eq!(
                dlp_model_predict(handle, positions.as_ptr(), 40, 1000.0, powers.as_mut_ptr()),
                DlpStatus::Ok
            );
            assert!(powers.iter().all(|&p| p >= 0.0));
            assert!(powers.iter().sum::<f64>() <= 1000.0 * (1.0 + 1e-9));

            // wrong input length is rejected before touching the buffer
            assert_eq!(
                dlp_model_predict(handle, positions.as_ptr(), 39, 1000.0, powers.as_mut_ptr()),
                DlpStatus::InvalidArgument
            );

            dlp_model_free(handle);
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn strategy_names_round_trip() {
        let maxmin = CString::new("maxmin").unwrap();
        let maxprod = CString::new("maxprod").unwrap();
        unsafe {
            assert_eq!(dlp_strategy_from_name(maxmin.as_ptr()), 0);
            assert_eq!(dlp_strategy_from_name(maxprod.as_ptr()), 1);
            let junk = CString::new("fair").unwrap();
            assert_eq!(dlp_strategy_from_name(junk.as_ptr()), -1);
            let name = CStr::from_ptr(dlp_strategy_name(1));
            assert_eq!(name.to_str().unwrap(), "maxprod");
        }
        assert!(dlp_strategy_name(9).is_null());
    }
}
