//! Per-pixel landslide chronology metrics and annual area composition over a
//! stack of annual binary maps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GridHeader, Raster, NODATA};
use crate::sampling::csv_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observation {
    Landslide,
    NonLandslide,
    Unobserved,
}

impl Observation {
    /// 1 is landslide, 0 non-landslide, anything else (nodata) unobserved.
    pub fn from_value(v: Option<f32>) -> Self {
        match v {
            Some(x) if x == 1.0 => Observation::Landslide,
            Some(x) if x == 0.0 => Observation::NonLandslide,
            _ => Observation::Unobserved,
        }
    }
}

/// Only an observed non-landslide year closes a landslide interval; gaps in
/// observation do not.
fn ends_interval(o: Observation) -> bool {
    o == Observation::NonLandslide
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnualMapStack {
    years: Vec<i32>,
    maps: Vec<Raster>,
}

impl AnnualMapStack {
    pub fn new(years: Vec<i32>, maps: Vec<Raster>) -> Result<Self> {
        if years.len() != maps.len() {
            return Err(Error::Input(format!("{} years for {} maps", years.len(), maps.len())));
        }
        if years.is_empty() {
            return Err(Error::Input("stack has no years".into()));
        }
        if years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("stack years must be strictly increasing".into()));
        }
        for m in &maps[1..] {
            maps[0].header().ensure_aligned(m.header())?;
        }
        for (y, m) in years.iter().zip(&maps) {
            if m.values().iter().any(|v| !v.is_nan() && *v != 0.0 && *v != 1.0) {
                return Err(Error::Input(format!("map for {y} holds values other than 0, 1, nodata")));
            }
        }
        Ok(AnnualMapStack { years, maps })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn maps(&self) -> &[Raster] {
        &self.maps
    }

    pub fn header(&self) -> &GridHeader {
        self.maps[0].header()
    }

    pub fn pixel_area_m2(&self) -> f64 {
        self.header().pixel_size.powi(2)
    }

    pub fn series(&self, index: usize) -> Vec<Observation> {
        self.maps
            .iter()
            .map(|m| Observation::from_value(m.values().get(index).copied().filter(|v| !v.is_nan())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub frequency: Option<f64>,
    pub first_occurrence: Option<i32>,
    pub persistence: Option<u32>,
    pub reoccurrence: Option<u32>,
    pub valid_years: u32,
    /// First observed year is already a landslide.
    pub left_censored: bool,
}

/// Metrics for one pixel; `years[i]` labels `series[i]`.
pub fn pixel_metrics(series: &[Observation], years: &[i32]) -> PixelMetrics {
    debug_assert_eq!(series.len(), years.len());
    let mut valid = 0u32;
    let mut landslide = 0u32;
    let mut first = None;
    let mut first_observed = None;
    let (mut run, mut longest) = (0u32, 0u32);
    let (mut in_interval, mut intervals) = (false, 0u32);
    for (&o, &y) in series.iter().zip(years) {
        if o != Observation::Unobserved {
            valid += 1;
            first_observed.get_or_insert(o);
        }
        if o == Observation::Landslide {
            landslide += 1;
            first.get_or_insert(y);
            run += 1;
            longest = longest.max(run);
            if !in_interval {
                intervals += 1;
                in_interval = true;
            }
        } else {
            run = 0;
            if ends_interval(o) {
                in_interval = false;
            }
        }
    }
    if valid == 0 {
        return PixelMetrics {
            frequency: None,
            first_occurrence: None,
            persistence: None,
            reoccurrence: None,
            valid_years: 0,
            left_censored: false,
        };
    }
    PixelMetrics {
        frequency: Some(landslide as f64 / valid as f64),
        first_occurrence: first,
        persistence: Some(longest),
        reoccurrence: Some(intervals),
        valid_years: valid,
        left_censored: first_observed == Some(Observation::Landslide),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRasters {
    pub frequency: Raster,
    pub first_occurrence: Raster,
    pub persistence: Raster,
    pub reoccurrence: Raster,
    /// 1 where the first observed year is landslide, 0 otherwise.
    pub left_censored: Raster,
}

impl MetricsRasters {
    pub fn named(&self) -> [(&'static str, &Raster); 5] {
        [
            ("frequency", &self.frequency),
            ("first_occurrence", &self.first_occurrence),
            ("persistence", &self.persistence),
            ("reoccurrence", &self.reoccurrence),
            ("left_censored", &self.left_censored),
        ]
    }
}

pub fn stack_metrics(stack: &AnnualMapStack) -> MetricsRasters {
    let header = stack.header().clone();
    let metrics: Vec<PixelMetrics> = (0..header.len())
        .into_par_iter()
        .map(|i| pixel_metrics(&stack.series(i), &stack.years))
        .collect();
    let build = |f: &dyn Fn(&PixelMetrics) -> Option<f32>| {
        let vals = metrics.iter().map(|m| f(m).unwrap_or(NODATA)).collect();
        Raster::new(header.clone(), vals).expect("metric raster matches grid")
    };
    MetricsRasters {
        frequency: build(&|m| m.frequency.map(|v| v as f32)),
        first_occurrence: build(&|m| m.first_occurrence.map(|v| v as f32)),
        persistence: build(&|m| m.persistence.map(|v| v as f32)),
        reoccurrence: build(&|m| m.reoccurrence.map(|v| v as f32)),
        left_censored: build(&|m| (m.valid_years > 0).then_some(if m.left_censored { 1.0 } else { 0.0 })),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    pub year: i32,
    pub old_pixels: usize,
    pub new_pixels: usize,
    pub revegetated_pixels: usize,
    /// Pixels observed in both this and the previous year, over all pixels.
    pub valid_fraction: f64,
    pub old_km2: Option<f64>,
    pub new_km2: Option<f64>,
    pub revegetated_km2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaComposition {
    pub rows: Vec<AreaRow>,
}

/// Old / new / revegetated areas for each year after the first, scaled up by
/// the inverse valid fraction.
pub fn area_composition(stack: &AnnualMapStack) -> Result<AreaComposition> {
    if stack.years.len() < 2 {
        return Err(Error::Input("area composition needs at least 2 years".into()));
    }
    let total = stack.header().len();
    let km2 = stack.pixel_area_m2() / 1e6;
    let rows = (1..stack.years.len())
        .map(|t| {
            let prev = stack.maps[t - 1].values();
            let cur = stack.maps[t].values();
            let (mut old, mut new, mut reveg, mut both) = (0usize, 0usize, 0usize, 0usize);
            for (&a, &b) in prev.iter().zip(cur) {
                if a.is_nan() || b.is_nan() {
                    continue;
                }
                both += 1;
                match (a == 1.0, b == 1.0) {
                    (true, true) => old += 1,
                    (false, true) => new += 1,
                    (true, false) => reveg += 1,
                    (false, false) => {}
                }
            }
            let valid_fraction = if total == 0 { 0.0 } else { both as f64 / total as f64 };
            let scale = |n: usize| (both > 0).then(|| n as f64 * km2 / valid_fraction);
            AreaRow {
                year: stack.years[t],
                old_pixels: old,
                new_pixels: new,
                revegetated_pixels: reveg,
                valid_fraction,
                old_km2: scale(old),
                new_km2: scale(new),
                revegetated_km2: scale(reveg),
            }
        })
        .collect();
    Ok(AreaComposition { rows })
}

pub fn write_area_csv(path: &Path, comp: &AreaComposition) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["year", "old_km2", "new_km2", "reveg_km2", "valid_fraction"])
        .map_err(|e| csv_err(path, e))?;
    let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &comp.rows {
        w.write_record([
            r.year.to_string(),
            f(r.old_km2),
            f(r.new_km2),
            f(r.revegetated_km2),
            format!("{}", r.valid_fraction),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
