//! C ABI over the `mortpanel` library.
//!
//! Panels and fits are opaque handles owned by the caller and released with
//! their `*_free` function. Every fallible call returns an [`MpStatus`]; on
//! failure [`mp_last_error_message`] describes the error for the calling
//! thread. Panics never cross the boundary: they are reported as
//! [`MpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mortpanel::dataset::load_panel;
use mortpanel::design::{NATIONAL_UNEMPLOYMENT, STATE_UNEMPLOYMENT};
use mortpanel::estim::{fit_model, ModelFit};
use mortpanel::mc::{generate_panel, SimConfig};
use mortpanel::series::hp_filter;
use mortpanel::{Error, ModelSpec, ModelType, PanelDataset, Series, SeriesKey, Subtype, WeightScheme};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid arguments or input data.
    InvalidInput = 2,
    /// Numerical or model failure, e.g. a rank-deficient design.
    Numerical = 3,
    /// A file could not be read.
    Io = 4,
    /// An internal panic was caught.
    Panic = 5,
    /// The requested value does not exist for this fit.
    NotAvailable = 6,
    /// An output buffer was too small; the required size was reported.
    BufferTooSmall = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpModelType {
    B = 0,
    L = 1,
    D = 2,
    Hp = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpWeights {
    Pop = 0,
    SqrtPop = 1,
}

/// Model specification. `series` is a NUL-terminated key such as "total".
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MpSpec {
    pub model_type: MpModelType,
    pub subtype: u8,
    pub series: *const c_char,
    pub hp_lambda: f64,
    pub weights: MpWeights,
    pub apply_icd_correction: bool,
}

/// Unemployment effect on the 100·beta scale. Clustered fields are NaN when
/// the panel has a single state.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpEffect {
    pub effect_100beta: f64,
    pub se_ols: f64,
    pub se_clustered: f64,
    pub p_ols: f64,
    pub p_clustered: f64,
}

/// Opaque panel handle.
pub struct MpPanel(PanelDataset);

/// Opaque fitted-model handle.
pub struct MpFit(ModelFit);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MpStatus {
    match e {
        Error::Io { .. } => MpStatus::Io,
        e if e.is_input_error() => MpStatus::InvalidInput,
        _ => MpStatus::Numerical,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (MpStatus, String)>) -> MpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            MpStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MpStatus, String) {
    (MpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MpStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (MpStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn mp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a panel from the three CSV files.
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_load(
    mortality_csv: *const c_char,
    unemployment_csv: *const c_char,
    agestructure_csv: *const c_char,
    out: *mut *mut MpPanel,
) -> MpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = PathBuf::from(c_str(mortality_csv, "mortality_csv")?);
        let u = PathBuf::from(c_str(unemployment_csv, "unemployment_csv")?);
        let a = PathBuf::from(c_str(agestructure_csv, "agestructure_csv")?);
        let data = load_panel(&m, &u, &a).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MpPanel(data)));
        Ok(())
    })
}

/// Generates a synthetic panel from a simulation config in JSON.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_simulate(config_json: *const c_char, out: *mut *mut MpPanel) -> MpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: SimConfig = serde_json::from_str(c_str(config_json, "config_json")?)
            .map_err(|e| (MpStatus::InvalidInput, format!("simulation config: {e}")))?;
        let (data, _) = generate_panel(&cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MpPanel(data)));
        Ok(())
    })
}

/// Releases a panel. Null is ignored.
///
/// # Safety
/// `panel` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_free(panel: *mut MpPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_n_states(panel: *const MpPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.n_states())
}

/// Number of years, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_n_years(panel: *const MpPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.n_years())
}

unsafe fn to_spec(spec: &MpSpec) -> Result<ModelSpec, (MpStatus, String)> {
    let model_type = match spec.model_type {
        MpModelType::B => ModelType::B,
        MpModelType::L => ModelType::L,
        MpModelType::D => ModelType::D,
        MpModelType::Hp => ModelType::HP,
    };
    let subtype = Subtype::try_from(spec.subtype).map_err(lib_err)?;
    let series: SeriesKey = c_str(spec.series, "spec.series")?.parse().map_err(lib_err)?;
    let mut s = ModelSpec::new(model_type, subtype, series);
    s.hp_lambda = spec.hp_lambda;
    s.apply_icd_correction = spec.apply_icd_correction;
    s.weights = match spec.weights {
        MpWeights::Pop => WeightScheme::Pop,
        MpWeights::SqrtPop => WeightScheme::SqrtPop,
    };
    s.validate().map_err(lib_err)?;
    Ok(s)
}

/// Fits a model to a panel.
///
/// # Safety
/// `panel` and `spec` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_fit(panel: *const MpPanel, spec: *const MpSpec, out: *mut *mut MpFit) -> MpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let panel = handle(panel, "panel")?;
        let spec = to_spec(handle(spec, "spec")?)?;
        let m = fit_model(&panel.0, &spec).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MpFit(m)));
        Ok(())
    })
}

/// Releases a fit. Null is ignored.
///
/// # Safety
/// `fit` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_free(fit: *mut MpFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of coefficients, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_n_coefficients(fit: *const MpFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.fit.k)
}

/// Estimate and standard errors of coefficient `index`. `se_clustered` is
/// NaN when unavailable. Any output pointer may be null.
///
/// # Safety
/// `fit` must be live; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_coefficient(
    fit: *const MpFit,
    index: usize,
    estimate: *mut f64,
    se_ols: *mut f64,
    se_clustered: *mut f64,
) -> MpStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.0.fit;
        if index >= f.k {
            return Err((MpStatus::InvalidInput, format!("coefficient index {index} out of range 0..{}", f.k)));
        }
        let label = &f.labels[index];
        if let Some(p) = estimate.as_mut() {
            *p = f.beta[index];
        }
        if let Some(p) = se_ols.as_mut() {
            *p = f.se_ols(label).unwrap_or(f64::NAN);
        }
        if let Some(p) = se_clustered.as_mut() {
            *p = f.se_clustered(label).unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Copies the label of coefficient `index` into `buf` as a NUL-terminated
/// string. `needed` (if non-null) receives the size including the NUL; a
/// short buffer yields `BufferTooSmall` and leaves `buf` untouched.
///
/// # Safety
/// `fit` must be live; `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_coefficient_label(
    fit: *const MpFit,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> MpStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.0.fit;
        let label = f
            .labels
            .get(index)
            .ok_or_else(|| (MpStatus::InvalidInput, format!("coefficient index {index} out of range")))?;
        let size = label.len() + 1;
        if let Some(n) = needed.as_mut() {
            *n = size;
        }
        if buf.is_null() || buf_len < size {
            return Err((MpStatus::BufferTooSmall, format!("label needs {size} bytes")));
        }
        ptr::copy_nonoverlapping(label.as_ptr().cast::<c_char>(), buf, label.len());
        *buf.add(label.len()) = 0;
        Ok(())
    })
}

/// Effect of state unemployment (`national` false) or national
/// unemployment (`national` true). `NotAvailable` if the spec lacks it.
///
/// # Safety
/// `fit` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_effect(fit: *const MpFit, national: bool, out: *mut MpEffect) -> MpStatus {
    guard(|| {
        let m = &handle(fit, "fit")?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let term = if national { NATIONAL_UNEMPLOYMENT } else { STATE_UNEMPLOYMENT };
        let e = m
            .effect(term)
            .ok_or_else(|| (MpStatus::NotAvailable, format!("{} has no {term} term", m.spec.short_name())))?;
        *out = MpEffect {
            effect_100beta: e.effect_100beta,
            se_ols: e.se_ols,
            se_clustered: e.se_clustered.unwrap_or(f64::NAN),
            p_ols: e.p_ols,
            p_clustered: e.p_clustered.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// AIC of the fit; `NotAvailable` for a perfect fit.
///
/// # Safety
/// `fit` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_aic(fit: *const MpFit, out: *mut f64) -> MpStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.0.fit;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = f.aic.ok_or_else(|| (MpStatus::NotAvailable, Error::DegenerateFit.to_string()))?;
        Ok(())
    })
}

/// Number of residuals (design rows), or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_n_residuals(fit: *const MpFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.fit.n)
}

/// Copies the natural-scale residuals, state-major, into `out[0..len]`.
/// `len` must equal [`mp_fit_n_residuals`].
///
/// # Safety
/// `fit` must be live; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_residuals(fit: *const MpFit, out: *mut f64, len: usize) -> MpStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.0.fit;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != f.n {
            return Err((MpStatus::BufferTooSmall, format!("expected {} residuals, buffer holds {len}", f.n)));
        }
        ptr::copy_nonoverlapping(f.residuals.as_ptr(), out, len);
        Ok(())
    })
}

/// Serialises the full fit as JSON. Free the string with [`mp_string_free`].
///
/// # Safety
/// `fit` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_fit_to_json(fit: *const MpFit, out: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let m = &handle(fit, "fit")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(m).map_err(|e| (MpStatus::Numerical, e.to_string()))?;
        *out = CString::new(text).map_err(|e| (MpStatus::Numerical, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// HP filter of `x[0..n]`; writes the trend and the residual (cycle).
/// Either output may be null.
///
/// # Safety
/// `x` must hold `n` doubles; non-null outputs must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_hp_filter(
    x: *const f64,
    n: usize,
    lambda: f64,
    trend_out: *mut f64,
    residual_out: *mut f64,
) -> MpStatus {
    guard(|| {
        if x.is_null() {
            return Err(null("x"));
        }
        let values = std::slice::from_raw_parts(x, n).to_vec();
        let hp = hp_filter(&Series::from_values(values).map_err(lib_err)?, lambda).map_err(lib_err)?;
        if !trend_out.is_null() {
            ptr::copy_nonoverlapping(hp.trend.values().as_ptr(), trend_out, n);
        }
        if !residual_out.is_null() {
            ptr::copy_nonoverlapping(hp.residual.values().as_ptr(), residual_out, n);
        }
        Ok(())
    })
}
