//! Nighttime-light harmonization: the newer radiance product is clamped and
//! mapped onto the older 0-63 digital-number scale with a linear-log model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Upper bound of the harmonized nighttime-light scale.
pub const DN_MAX: f64 = 63.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtlCalibration {
    pub slope: f64,
    pub intercept: f64,
    pub clamp_low: f64,
    pub clamp_high: f64,
    pub correlation: f64,
}

impl NtlCalibration {
    /// Published coefficients for the 2013 overlap year.
    pub const PUBLISHED: NtlCalibration = NtlCalibration {
        slope: 26.139,
        intercept: 23.179,
        clamp_low: 0.2,
        clamp_high: 40.0,
        correlation: 0.94,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_low < self.clamp_high) || self.clamp_low <= 0.0 {
            return Err(Error::Parameter(format!(
                "calibration clamp range ({}, {}) is invalid",
                self.clamp_low, self.clamp_high
            )));
        }
        if !self.slope.is_finite() || !self.intercept.is_finite() {
            return Err(Error::Parameter("calibration coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Harmonized value for one radiance: clamp, linear-log map, clamp to 0..63.
    pub fn apply_value(&self, radiance: f64) -> f64 {
        let v = radiance.clamp(self.clamp_low, self.clamp_high);
        (self.slope * v.log10() + self.intercept).clamp(0.0, DN_MAX)
    }

    /// Radiance whose unclamped harmonized value is `dn`.
    pub fn invert_value(&self, dn: f64) -> f64 {
        10f64.powf((dn - self.intercept) / self.slope)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("calibration serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cal: NtlCalibration = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cal.validate()?;
        Ok(cal)
    }
}

pub fn clamp_outliers(v: &Raster, low: f64, high: f64) -> Result<Raster> {
    if !(low < high) {
        return Err(Error::Parameter(format!("clamp bounds need low < high, got ({low}, {high})")));
    }
    let (lo, hi) = (low as f32, high as f32);
    Ok(v.map(|x| if x.is_nan() { x } else { x.clamp(lo, hi) }))
}

/// Least-squares fit of `dmsp ~ slope * log10(clamp(viirs)) + intercept`.
///
/// Pairs whose radiance is not positive or either value is missing are
/// skipped. The fit is done on centered values so that exact linear data is
/// recovered to rounding precision.
pub fn fit_calibration_pairs(pairs: &[(f64, f64)]) -> Result<NtlCalibration> {
    let (low, high) = (NtlCalibration::PUBLISHED.clamp_low, NtlCalibration::PUBLISHED.clamp_high);
    let xy: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(v, d)| v.is_finite() && d.is_finite() && *v > 0.0)
        .map(|&(v, d)| (v.clamp(low, high).log10(), d))
        .collect();
    if xy.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 valid pixel pairs, found {}", xy.len())));
    }
    let n = xy.len() as f64;
    let mx = pairwise_sum(&xy, |p| p.0) / n;
    let my = pairwise_sum(&xy, |p| p.1) / n;
    let sxx = pairwise_sum(&xy, |p| (p.0 - mx) * (p.0 - mx));
    let syy = pairwise_sum(&xy, |p| (p.1 - my) * (p.1 - my));
    let sxy = pairwise_sum(&xy, |p| (p.0 - mx) * (p.1 - my));
    if sxx <= f64::EPSILON * n * (1.0 + mx * mx) {
        return Err(Error::Fit("log radiance has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let correlation = if syy > 0.0 {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok(NtlCalibration {
        slope,
        intercept,
        clamp_low: low,
        clamp_high: high,
        correlation,
    })
}

/// Fit from two aligned rasters.
pub fn fit_calibration(viirs: &Raster, dmsp: &Raster) -> Result<NtlCalibration> {
    viirs.header().ensure_aligned(dmsp.header())?;
    let pairs: Vec<(f64, f64)> = viirs
        .values()
        .iter()
        .zip(dmsp.values())
        .map(|(&v, &d)| (v as f64, d as f64))
        .collect();
    fit_calibration_pairs(&pairs)
}

pub fn apply_calibration(viirs: &Raster, cal: &NtlCalibration) -> Result<Raster> {
    cal.validate()?;
    let cal = *cal;
    Ok(viirs.map(move |v| if v.is_nan() { v } else { cal.apply_value(v as f64) as f32 }))
}

fn pairwise_sum<T>(items: &[T], f: impl Fn(&T) -> f64 + Copy) -> f64 {
    if items.len() <= 64 {
        return items.iter().map(f).sum();
    }
    let (a, b) = items.split_at(items.len() / 2);
    pairwise_sum(a, f) + pairwise_sum(b, f)
}
