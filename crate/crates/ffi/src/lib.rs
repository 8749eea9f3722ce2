//! C interface over `landslide-core`.
//!
//! Objects are opaque handles created by `*_load` / `*_new` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! `LsStatus`; on failure the message is available from
//! [`ls_last_error_message`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use landslide_core::chronology::{pixel_metrics, Observation};
use landslide_core::evaluation::{accuracy_report, ConfusionCounts};
use landslide_core::forest::RandomForestModel;
use landslide_core::ntl::{apply_calibration, NtlCalibration};
use landslide_core::raster::{read_raster, write_raster, GridHeader, Raster};
use landslide_core::sampling::Label;
use landslide_core::{Error, ErrorKind};

/// Status codes. Positive values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    /// A caller-supplied buffer is too small.
    BufferTooSmall = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

pub struct LsRaster(Raster);
pub struct LsModel(RandomForestModel);
pub struct LsCalibration(NtlCalibration);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsAccuracy {
    pub oa: f64,
    /// NaN when no pixel was predicted landslide.
    pub ua: f64,
    /// NaN when the reference holds no landslide.
    pub pa: f64,
}

/// Per-pixel chronology. Undefined metrics are NaN or -1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsPixelMetrics {
    pub frequency: f64,
    pub first_occurrence: i32,
    pub persistence: i32,
    pub reoccurrence: i32,
    pub valid_years: u32,
    pub left_censored: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LsStatus {
    match e.kind() {
        ErrorKind::Config => LsStatus::Config,
        ErrorKind::Data => LsStatus::Data,
        ErrorKind::Numerical => LsStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LsStatus>) -> LsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            LsStatus::Internal
        }
    }
}

fn fail(e: Error) -> LsStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> LsStatus {
    set_error(format!("{what} is null"));
    LsStatus::NullArgument
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, LsStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("path is not valid UTF-8".into());
        LsStatus::Config
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn out_handle<T>(out: *mut *mut T, value: T) -> Result<(), LsStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the message of the last failed call on this thread into `buf`,
/// NUL-terminated. Returns the message length in bytes excluding the NUL, or
/// 0 when there is no message.
#[no_mangle]
pub unsafe extern "C" fn ls_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Rasters

/// Creates a raster from `width * height` row-major values; NaN is nodata.
#[no_mangle]
pub unsafe extern "C" fn ls_raster_new(
    width: usize,
    height: usize,
    origin_x: f64,
    origin_y: f64,
    pixel_size: f64,
    values: *const f32,
    out: *mut *mut LsRaster,
) -> LsStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let header = GridHeader::new(width, height, origin_x, origin_y, pixel_size, "unknown").map_err(fail)?;
        let n = width.checked_mul(height).ok_or_else(|| fail(Error::Parameter("grid too large".into())))?;
        let data = std::slice::from_raw_parts(values, n).to_vec();
        let r = Raster::new(header, data).map_err(fail)?;
        out_handle(out, LsRaster(r))
    })
}

/// Loads a raster from its file stem (`<stem>.hdr.json` plus payload).
#[no_mangle]
pub unsafe extern "C" fn ls_raster_load(path: *const c_char, out: *mut *mut LsRaster) -> LsStatus {
    guard(|| {
        let p = path_arg(path)?;
        let r = read_raster(&p).map_err(fail)?;
        out_handle(out, LsRaster(r))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_raster_save(raster: *const LsRaster, path: *const c_char) -> LsStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        let p = path_arg(path)?;
        write_raster(&p, &r.0).map(|_| ()).map_err(fail)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_raster_dims(raster: *const LsRaster, width: *mut usize, height: *mut usize) -> LsStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        if width.is_null() || height.is_null() {
            return Err(null("output pointer"));
        }
        *width = r.0.width();
        *height = r.0.height();
        Ok(())
    })
}

/// Copies all values into `buf`, which must hold at least `width * height`.
#[no_mangle]
pub unsafe extern "C" fn ls_raster_copy_values(raster: *const LsRaster, buf: *mut f32, len: usize) -> LsStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let v = r.0.values();
        if len < v.len() {
            set_error(format!("buffer holds {len} values, raster has {}", v.len()));
            return Err(LsStatus::BufferTooSmall);
        }
        std::ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_raster_free(raster: *mut LsRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

// ---------------------------------------------------------------------------
// Models

#[no_mangle]
pub unsafe extern "C" fn ls_model_load(path: *const c_char, out: *mut *mut LsModel) -> LsStatus {
    guard(|| {
        let p = path_arg(path)?;
        let m = RandomForestModel::load(&p).map_err(fail)?;
        out_handle(out, LsModel(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_model_n_features(model: *const LsModel, out: *mut usize) -> LsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = m.0.n_features();
        Ok(())
    })
}

/// Predicts one row of `n` features. `label` receives 1 for landslide and 0
/// otherwise; `fraction` the share of trees voting for that label.
#[no_mangle]
pub unsafe extern "C" fn ls_model_predict(
    model: *const LsModel,
    row: *const f64,
    n: usize,
    label: *mut i32,
    fraction: *mut f64,
) -> LsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if row.is_null() || label.is_null() || fraction.is_null() {
            return Err(null("argument"));
        }
        let row = std::slice::from_raw_parts(row, n);
        let (l, f) = m.0.predict(row).map_err(fail)?;
        *label = i32::from(l == Label::Landslide);
        *fraction = f;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// Nighttime-light calibration

/// The built-in published coefficients.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_published(out: *mut *mut LsCalibration) -> LsStatus {
    guard(|| out_handle(out, LsCalibration(NtlCalibration::PUBLISHED)))
}

#[no_mangle]
pub unsafe extern "C" fn ls_calibration_load(path: *const c_char, out: *mut *mut LsCalibration) -> LsStatus {
    guard(|| {
        let p = path_arg(path)?;
        let c = NtlCalibration::load(&p).map_err(fail)?;
        out_handle(out, LsCalibration(c))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_calibration_apply_value(cal: *const LsCalibration, radiance: f64, out: *mut f64) -> LsStatus {
    guard(|| {
        let c = cal.as_ref().ok_or_else(|| null("calibration"))?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = c.0.apply_value(radiance);
        Ok(())
    })
}

/// Harmonizes a radiance raster into a new raster handle.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_apply(
    cal: *const LsCalibration,
    radiance: *const LsRaster,
    out: *mut *mut LsRaster,
) -> LsStatus {
    guard(|| {
        let c = cal.as_ref().ok_or_else(|| null("calibration"))?;
        let r = radiance.as_ref().ok_or_else(|| null("raster"))?;
        let h = apply_calibration(&r.0, &c.0).map_err(fail)?;
        out_handle(out, LsRaster(h))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_calibration_free(cal: *mut LsCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

// ---------------------------------------------------------------------------
// Chronology and accuracy

/// Metrics for one pixel. `series[i]` is 1 (landslide), 0 (not landslide)
/// or any other value for unobserved, labelled by `years[i]`.
#[no_mangle]
pub unsafe extern "C" fn ls_pixel_metrics(
    series: *const i8,
    years: *const i32,
    n: usize,
    out: *mut LsPixelMetrics,
) -> LsStatus {
    guard(|| {
        if series.is_null() || years.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let obs: Vec<Observation> = std::slice::from_raw_parts(series, n)
            .iter()
            .map(|&v| match v {
                1 => Observation::Landslide,
                0 => Observation::NonLandslide,
                _ => Observation::Unobserved,
            })
            .collect();
        let years = std::slice::from_raw_parts(years, n);
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(fail(Error::Input("years must be strictly increasing".into())));
        }
        let m = pixel_metrics(&obs, years);
        let opt = |v: Option<u32>| v.map_or(-1, |x| x as i32);
        *out = LsPixelMetrics {
            frequency: m.frequency.unwrap_or(f64::NAN),
            first_occurrence: m.first_occurrence.unwrap_or(-1),
            persistence: opt(m.persistence),
            reoccurrence: opt(m.reoccurrence),
            valid_years: m.valid_years,
            left_censored: m.left_censored,
        };
        Ok(())
    })
}

/// OA, UA and PA from confusion counts.
#[no_mangle]
pub unsafe extern "C" fn ls_accuracy(tp: u64, tn: u64, fp: u64, fn_: u64, out: *mut LsAccuracy) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let c = ConfusionCounts {
            tp: tp as usize,
            tn: tn as usize,
            fp: fp as usize,
            fn_: fn_ as usize,
        };
        let a = accuracy_report(&c).map_err(fail)?;
        *out = LsAccuracy {
            oa: a.oa,
            ua: a.ua.unwrap_or(f64::NAN),
            pa: a.pa.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
