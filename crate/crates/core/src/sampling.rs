//! Labeled point sampling with a minimum-distance constraint, spatial
//! autocorrelation diagnostics, class-ratio controlled training allocation and
//! feature extraction.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "non-landslide")]
    NonLandslide = 0,
    #[serde(rename = "landslide")]
    Landslide = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::NonLandslide),
            1 => Some(Label::Landslide),
            _ => None,
        }
    }

    pub fn is_landslide(self) -> bool {
        self == Label::Landslide
    }
}

/// Land-cover subclass. Codes are the raster encoding of reference maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subclass {
    Landslide = 0,
    Building = 1,
    Road = 2,
    Agriculture = 3,
    Forest = 4,
    Barren = 5,
    Water = 6,
}

impl Subclass {
    pub const ALL: [Subclass; 7] = [
        Subclass::Landslide,
        Subclass::Building,
        Subclass::Road,
        Subclass::Agriculture,
        Subclass::Forest,
        Subclass::Barren,
        Subclass::Water,
    ];

    /// The six non-landslide land covers.
    pub const NON_LANDSLIDE: [Subclass; 6] = [
        Subclass::Building,
        Subclass::Road,
        Subclass::Agriculture,
        Subclass::Forest,
        Subclass::Barren,
        Subclass::Water,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: f32) -> Option<Self> {
        if code.fract() != 0.0 || !(0.0..=6.0).contains(&code) {
            return None;
        }
        Some(Self::ALL[code as usize])
    }

    pub fn label(self) -> Label {
        if self == Subclass::Landslide {
            Label::Landslide
        } else {
            Label::NonLandslide
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subclass::Landslide => "landslide",
            Subclass::Building => "building",
            Subclass::Road => "road",
            Subclass::Agriculture => "agriculture",
            Subclass::Forest => "forest",
            Subclass::Barren => "barren",
            Subclass::Water => "water",
        }
    }

    pub fn is_builtup(self) -> bool {
        matches!(self, Subclass::Building | Subclass::Road)
    }
}

impl fmt::Display for Subclass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub year: i32,
    pub label: Label,
    pub subclass: Subclass,
}

impl SamplePoint {
    pub fn new(x: f64, y: f64, year: i32, subclass: Subclass) -> Self {
        SamplePoint {
            x,
            y,
            year,
            label: subclass.label(),
            subclass,
        }
    }

    pub fn distance(&self, other: &SamplePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub points: Vec<SamplePoint>,
    pub min_distance: f64,
    /// Set when fewer points than requested fit under the distance rule.
    pub saturated: bool,
}

impl SampleSet {
    pub fn new(points: Vec<SamplePoint>, min_distance: f64) -> Self {
        SampleSet {
            points,
            min_distance,
            saturated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }

    pub fn count_subclass(&self, subclass: Subclass) -> usize {
        self.points.iter().filter(|p| p.subclass == subclass).count()
    }

    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        SampleSet::new(indices.iter().map(|&i| self.points[i]).collect(), self.min_distance)
    }

    /// Smallest same-year pairwise distance, by exhaustive comparison.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                if a.year == b.year {
                    let d = a.distance(b);
                    best = Some(best.map_or(d, |m: f64| m.min(d)));
                }
            }
        }
        best
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for p in &self.points {
            w.serialize(p).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, min_distance: f64) -> Result<SampleSet> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut points = Vec::new();
        for rec in r.deserialize() {
            let p: SamplePoint = rec.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            if p.label != p.subclass.label() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("label {:?} contradicts subclass {}", p.label, p.subclass),
                });
            }
            points.push(p);
        }
        Ok(SampleSet::new(points, min_distance))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

// ---------------------------------------------------------------------------
// Moran's I correlogram

/// Which pixel offsets count as neighbours at lag `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contiguity {
    /// All offsets with Chebyshev distance exactly `d`.
    Queen,
    /// Only the four axis-aligned offsets at distance `d`.
    Rook,
}

impl Contiguity {
    fn offsets(self, d: isize) -> Vec<(isize, isize)> {
        match self {
            Contiguity::Rook => vec![(-d, 0), (d, 0), (0, -d), (0, d)],
            Contiguity::Queen => {
                let mut v = Vec::with_capacity(8 * d as usize);
                for dr in -d..=d {
                    for dc in -d..=d {
                        if dr.abs().max(dc.abs()) == d {
                            v.push((dr, dc));
                        }
                    }
                }
                v
            }
        }
    }
}

/// Moran's I for lags `1..=max_lag` with binary weights over valid pixels.
///
/// A lag with no valid neighbour pair reports NaN.
pub fn morans_correlogram(raster: &Raster, max_lag: usize, contiguity: Contiguity) -> Result<Vec<(usize, f64)>> {
    if max_lag == 0 {
        return Err(Error::Parameter("max_lag must be at least 1".into()));
    }
    let (w, h) = (raster.width(), raster.height());
    let vals = raster.values();
    let valid: Vec<f64> = vals.iter().filter(|v| !v.is_nan()).map(|&v| v as f64).collect();
    let n = valid.len();
    if n < 2 {
        return Err(Error::Diagnostic("need at least two valid pixels".into()));
    }
    let mean = valid.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = vals
        .iter()
        .map(|&v| if v.is_nan() { f64::NAN } else { v as f64 - mean })
        .collect();
    let ss: f64 = z.iter().filter(|v| !v.is_nan()).map(|v| v * v).sum();
    if ss <= 0.0 {
        return Err(Error::Diagnostic("raster has zero variance".into()));
    }

    let mut out = Vec::with_capacity(max_lag);
    for lag in 1..=max_lag {
        let offsets = contiguity.offsets(lag as isize);
        let per_row: Vec<(f64, f64)> = (0..h)
            .into_par_iter()
            .map(|r| {
                let mut cross = 0.0;
                let mut weight = 0.0;
                for c in 0..w {
                    let zi = z[r * w + c];
                    if zi.is_nan() {
                        continue;
                    }
                    for &(dr, dc) in &offsets {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let zj = z[rr as usize * w + cc as usize];
                        if !zj.is_nan() {
                            cross += zi * zj;
                            weight += 1.0;
                        }
                    }
                }
                (cross, weight)
            })
            .collect();
        let (cross, weight) = per_row
            .iter()
            .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
        let i = if weight > 0.0 {
            (n as f64 / weight) * (cross / ss)
        } else {
            f64::NAN
        };
        out.push((lag, i));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Minimum-distance sampling

/// Hash grid answering "is any accepted point of this year closer than d".
struct DistanceIndex {
    cell: f64,
    min_dist: f64,
    buckets: HashMap<(i32, i64, i64), Vec<(f64, f64)>>,
}

impl DistanceIndex {
    fn new(min_dist: f64) -> Self {
        DistanceIndex {
            cell: min_dist.max(1e-9),
            min_dist,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: &SamplePoint) -> (i32, i64, i64) {
        (p.year, (p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    /// True if some indexed point lies strictly closer than `radius`, or
    /// within it when `inclusive`.
    fn near(&self, p: &SamplePoint, radius: f64, inclusive: bool) -> bool {
        let (year, kx, ky) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(year, kx + dx, ky + dy)) {
                    for &(x, y) in b {
                        let d = (p.x - x).hypot(p.y - y);
                        if d < radius || (inclusive && d <= radius) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    fn conflicts(&self, p: &SamplePoint) -> bool {
        self.min_dist > 0.0 && self.near(p, self.min_dist, false)
    }

    fn insert(&mut self, p: &SamplePoint) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push((p.x, p.y));
    }
}

fn pixel_point(labels: &Raster, idx: usize, year: i32) -> Result<SamplePoint> {
    let code = labels.values()[idx];
    let subclass = Subclass::from_code(code)
        .ok_or_else(|| Error::Input(format!("label raster holds unknown subclass code {code}")))?;
    let w = labels.width();
    let (x, y) = labels.header().pixel_center(idx / w, idx % w);
    Ok(SamplePoint::new(x, y, year, subclass))
}

const PATIENCE_FACTOR: usize = 50;

/// Draws up to `n` points from the candidate pixels, consuming candidates
/// without replacement and stopping after `50 * n` consecutive rejections.
fn draw_into<R: Rng + ?Sized>(
    labels: &Raster,
    year: i32,
    mut candidates: Vec<usize>,
    n: usize,
    index: &mut DistanceIndex,
    rng: &mut R,
    out: &mut Vec<SamplePoint>,
) -> Result<bool> {
    let patience = PATIENCE_FACTOR * n.max(1);
    let mut accepted = 0;
    let mut rejections = 0;
    while accepted < n && !candidates.is_empty() && rejections < patience {
        let k = rng.random_range(0..candidates.len());
        let idx = candidates.swap_remove(k);
        let p = pixel_point(labels, idx, year)?;
        if index.conflicts(&p) {
            rejections += 1;
            continue;
        }
        rejections = 0;
        index.insert(&p);
        out.push(p);
        accepted += 1;
    }
    Ok(accepted < n)
}

/// Rejection sampling of `n` pixel centers of a subclass-coded raster with
/// pairwise spacing of at least `min_dist`.
pub fn sample_min_distance<R: Rng + ?Sized>(
    labels: &Raster,
    year: i32,
    n: usize,
    min_dist: f64,
    rng: &mut R,
) -> Result<SampleSet> {
    if !(min_dist >= 0.0) {
        return Err(Error::Parameter(format!("min_dist must be >= 0, got {min_dist}")));
    }
    let candidates: Vec<usize> = (0..labels.values().len())
        .filter(|&i| !labels.values()[i].is_nan())
        .collect();
    if candidates.is_empty() {
        return Err(Error::Sampling("label raster has no valid pixel".into()));
    }
    let mut index = DistanceIndex::new(min_dist);
    let mut points = Vec::with_capacity(n);
    let saturated = draw_into(labels, year, candidates, n, &mut index, rng, &mut points)?;
    Ok(SampleSet {
        points,
        min_distance: min_dist,
        saturated,
    })
}

/// Like [`sample_min_distance`], but with a quota per subclass. Strata are
/// drawn in the given order and share one spacing constraint.
pub fn sample_stratified<R: Rng + ?Sized>(
    labels: &Raster,
    year: i32,
    quotas: &[(Subclass, usize)],
    min_dist: f64,
    rng: &mut R,
) -> Result<SampleSet> {
    if !(min_dist >= 0.0) {
        return Err(Error::Parameter(format!("min_dist must be >= 0, got {min_dist}")));
    }
    let mut by_class: HashMap<Subclass, Vec<usize>> = HashMap::new();
    for (i, &v) in labels.values().iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let s = Subclass::from_code(v)
            .ok_or_else(|| Error::Input(format!("label raster holds unknown subclass code {v}")))?;
        by_class.entry(s).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(Error::Sampling("label raster has no valid pixel".into()));
    }
    let mut index = DistanceIndex::new(min_dist);
    let mut points = Vec::new();
    let mut saturated = false;
    for &(subclass, n) in quotas {
        if n == 0 {
            continue;
        }
        let candidates = by_class.remove(&subclass).unwrap_or_default();
        saturated |= draw_into(labels, year, candidates, n, &mut index, rng, &mut points)?;
    }
    Ok(SampleSet {
        points,
        min_distance: min_dist,
        saturated,
    })
}

/// Per-subclass pool quotas: `n_landslide` landslide points, and `n_non`
/// non-landslide points split as `min_per_subclass` each plus a remainder
/// proportional to each subclass's pixel frequency in `labels`.
pub fn pool_quotas(labels: &Raster, n_landslide: usize, n_non: usize, min_per_subclass: usize) -> Vec<(Subclass, usize)> {
    let mut freq = [0usize; 7];
    for &v in labels.values() {
        if let Some(s) = Subclass::from_code(v) {
            freq[s as usize] += 1;
        }
    }
    let counts: Vec<usize> = Subclass::NON_LANDSLIDE.iter().map(|&s| freq[s as usize]).collect();
    let floors: Vec<usize> = counts.iter().map(|&c| min_per_subclass.min(c)).collect();
    let rest = n_non.saturating_sub(floors.iter().sum());
    let extra = proportional_split(rest, &counts, &counts.iter().zip(&floors).map(|(c, f)| c - f).collect::<Vec<_>>());
    let mut quotas = vec![(Subclass::Landslide, n_landslide)];
    for (i, &s) in Subclass::NON_LANDSLIDE.iter().enumerate() {
        quotas.push((s, floors[i] + extra[i]));
    }
    quotas
}

/// Splits `total` proportionally to `weights` by largest remainder, never
/// exceeding `caps`; ties go to the lower index. Returns less than `total`
/// only when the caps are exhausted.
fn proportional_split(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    let mut alloc = vec![0usize; weights.len()];
    let mut open: Vec<bool> = caps.iter().map(|&c| c > 0).collect();
    let mut remaining = total;
    while remaining > 0 {
        let wsum: usize = weights.iter().zip(&open).filter(|(_, &o)| o).map(|(w, _)| *w).sum();
        if wsum == 0 {
            break;
        }
        let mut share: Vec<(usize, f64)> = Vec::new();
        let mut given = 0;
        for i in 0..weights.len() {
            if !open[i] {
                continue;
            }
            let exact = remaining as f64 * weights[i] as f64 / wsum as f64;
            let base = exact.floor() as usize;
            alloc[i] += base;
            given += base;
            share.push((i, exact - base as f64));
        }
        let mut left = remaining - given;
        share.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(i, _) in &share {
            if left == 0 {
                break;
            }
            alloc[i] += 1;
            left -= 1;
        }
        // Clip to capacity and redistribute the overflow.
        let mut overflow = 0;
        for i in 0..weights.len() {
            if alloc[i] >= caps[i] {
                overflow += alloc[i] - caps[i];
                alloc[i] = caps[i];
                open[i] = false;
            }
        }
        remaining = overflow;
    }
    alloc
}

/// Splits `total` training points into landslide and non-landslide counts
/// for class ratio `beta` (non-landslide : landslide).
pub fn beta_counts(beta: f64, total: usize) -> (usize, usize) {
    let landslide = (total as f64 / (1.0 + beta)).round() as usize;
    (landslide, total - landslide)
}

/// Indices into `pool` of a class-ratio-controlled training draw.
pub fn beta_allocate_indices<R: Rng + ?Sized>(
    pool: &[SamplePoint],
    beta: f64,
    total: usize,
    min_per_subclass: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be >= 1, got {beta}")));
    }
    let (n_land, n_non) = beta_counts(beta, total);
    let mut strata: HashMap<Subclass, Vec<usize>> = HashMap::new();
    for (i, p) in pool.iter().enumerate() {
        strata.entry(p.subclass).or_default().push(i);
    }
    let available = |s: Subclass| strata.get(&s).map_or(0, Vec::len);

    if available(Subclass::Landslide) < n_land {
        return Err(Error::Allocation(format!(
            "need {n_land} landslide points, pool has {}",
            available(Subclass::Landslide)
        )));
    }
    for s in Subclass::NON_LANDSLIDE {
        if available(s) < min_per_subclass {
            return Err(Error::Allocation(format!(
                "subclass {s} has {} points, below the minimum of {min_per_subclass}",
                available(s)
            )));
        }
    }
    let floor_total = min_per_subclass * Subclass::NON_LANDSLIDE.len();
    if floor_total > n_non {
        return Err(Error::Allocation(format!(
            "{n_non} non-landslide points cannot cover {min_per_subclass} per subclass"
        )));
    }
    let counts: Vec<usize> = Subclass::NON_LANDSLIDE.iter().map(|&s| available(s)).collect();
    let caps: Vec<usize> = counts.iter().map(|c| c - min_per_subclass).collect();
    let extra = proportional_split(n_non - floor_total, &counts, &caps);
    let placed: usize = extra.iter().sum::<usize>() + floor_total;
    if placed < n_non {
        return Err(Error::Allocation(format!(
            "non-landslide pool holds {} points, need {n_non}",
            counts.iter().sum::<usize>()
        )));
    }

    let mut chosen = Vec::with_capacity(total);
    let mut draw = |s: Subclass, k: usize, rng: &mut R| {
        if k == 0 {
            return;
        }
        let mut idx = strata[&s].clone();
        let (picked, _) = idx.partial_shuffle(rng, k);
        chosen.extend_from_slice(picked);
    };
    draw(Subclass::Landslide, n_land, rng);
    for (i, &s) in Subclass::NON_LANDSLIDE.iter().enumerate() {
        draw(s, min_per_subclass + extra[i], rng);
    }
    Ok(chosen)
}

/// [`beta_allocate_indices`] applied per year with equal shares of `total`
/// (earlier years take the remainder) and of `min_per_subclass`, rounded up.
pub fn beta_allocate_by_year<R: Rng + ?Sized>(
    pool: &[SamplePoint],
    beta: f64,
    total: usize,
    min_per_subclass: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut years: Vec<i32> = pool.iter().map(|p| p.year).collect();
    years.sort_unstable();
    years.dedup();
    if years.is_empty() {
        return Err(Error::Allocation("training pool is empty".into()));
    }
    let k = years.len();
    let mut chosen = Vec::with_capacity(total);
    for (j, &year) in years.iter().enumerate() {
        let share = total / k + usize::from(j < total % k);
        let idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].year == year).collect();
        let points: Vec<SamplePoint> = idx.iter().map(|&i| pool[i]).collect();
        let picked = beta_allocate_indices(&points, beta, share, min_per_subclass.div_ceil(k), rng)
            .map_err(|e| match e {
                Error::Allocation(m) => Error::Allocation(format!("year {year}: {m}")),
                e => e,
            })?;
        chosen.extend(picked.into_iter().map(|i| idx[i]));
    }
    Ok(chosen)
}

pub fn beta_allocate<R: Rng + ?Sized>(
    pool: &SampleSet,
    beta: f64,
    total: usize,
    min_per_subclass: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    let idx = beta_allocate_indices(&pool.points, beta, total, min_per_subclass, rng)?;
    Ok(pool.subset(&idx))
}

/// Validation points farther than `min_dist` from every same-year training
/// point.
pub fn split_disjoint(training: &SampleSet, validation: &SampleSet, min_dist: f64) -> SampleSet {
    let mut index = DistanceIndex::new(min_dist);
    for p in &training.points {
        index.insert(p);
    }
    let points = validation
        .points
        .iter()
        .filter(|p| !index.near(p, min_dist, true))
        .copied()
        .collect();
    SampleSet {
        points,
        min_distance: validation.min_distance,
        saturated: validation.saturated,
    }
}

// ---------------------------------------------------------------------------
// Feature extraction

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    values: Vec<f64>,
    pub labels: Vec<Label>,
    pub feature_names: Vec<String>,
    /// Index into the source point list for each row.
    pub source: Vec<usize>,
    /// Points dropped for missing values or falling outside the grid.
    pub dropped: usize,
}

impl TrainingMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<Label>, feature_names: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Input(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let p = feature_names.len();
        let mut values = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::Input(format!("row {i} has {} features, expected {p}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("row {i} has a missing value")));
            }
            values.extend_from_slice(r);
        }
        let source = (0..labels.len()).collect();
        Ok(TrainingMatrix {
            values,
            labels,
            feature_names,
            source,
            dropped: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_features().max(1)).take(self.n_rows())
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingMatrix {
        let p = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        TrainingMatrix {
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            source: indices.iter().map(|&i| self.source[i]).collect(),
            dropped: 0,
        }
    }

    /// Concatenates matrices with identical feature names.
    pub fn concat(parts: &[TrainingMatrix]) -> Result<TrainingMatrix> {
        let Some(first) = parts.first() else {
            return Err(Error::Input("nothing to concatenate".into()));
        };
        let mut out = TrainingMatrix {
            values: Vec::new(),
            labels: Vec::new(),
            feature_names: first.feature_names.clone(),
            source: Vec::new(),
            dropped: 0,
        };
        for m in parts {
            if m.feature_names != out.feature_names {
                return Err(Error::Schema("feature names differ between matrices".into()));
            }
            out.values.extend_from_slice(&m.values);
            out.labels.extend_from_slice(&m.labels);
            out.source.extend_from_slice(&m.source);
            out.dropped += m.dropped;
        }
        Ok(out)
    }

    /// Column subset in the order of `names`.
    pub fn select_features(&self, names: &[String]) -> Result<TrainingMatrix> {
        let cols: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Schema(format!("feature {n} not in matrix")))
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.n_rows() * cols.len());
        for row in self.rows() {
            values.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(TrainingMatrix {
            values,
            labels: self.labels.clone(),
            feature_names: names.to_vec(),
            source: self.source.clone(),
            dropped: self.dropped,
        })
    }
}

/// One row per point at its containing pixel; rows with missing values and
/// points outside the stack are dropped and counted.
pub fn extract_features(points: &[SamplePoint], stack: &FeatureStack) -> TrainingMatrix {
    let header = stack.header();
    let p = stack.layers().len();
    let mut values = Vec::with_capacity(points.len() * p);
    let mut labels = Vec::with_capacity(points.len());
    let mut source = Vec::with_capacity(points.len());
    let mut dropped = 0;
    for (i, pt) in points.iter().enumerate() {
        let row = header
            .locate(pt.x, pt.y)
            .and_then(|(r, c)| stack.pixel_row(r * header.width + c));
        match row {
            Some(row) => {
                values.extend_from_slice(&row);
                labels.push(pt.label);
                source.push(i);
            }
            None => dropped += 1,
        }
    }
    TrainingMatrix {
        values,
        labels,
        feature_names: stack.layer_names(),
        source,
        dropped,
    }
}

/// Sample points paired with their extracted feature rows.
#[derive(Debug, Clone)]
pub struct FeaturedPool {
    pub points: Vec<SamplePoint>,
    pub matrix: TrainingMatrix,
}

impl FeaturedPool {
    /// Extracts features per point year; points without a stack for their
    /// year are dropped.
    pub fn build(points: &[SamplePoint], stacks: &std::collections::BTreeMap<i32, FeatureStack>) -> Result<Self> {
        let mut parts = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = 0;
        let mut names: Option<Vec<String>> = None;
        for (year, stack) in stacks {
            let idx: Vec<usize> = (0..points.len()).filter(|&i| points[i].year == *year).collect();
            let year_points: Vec<SamplePoint> = idx.iter().map(|&i| points[i]).collect();
            let mut m = extract_features(&year_points, stack);
            kept.extend(m.source.iter().map(|&k| year_points[k]));
            m.source = m.source.iter().map(|&k| idx[k]).collect();
            names.get_or_insert_with(|| m.feature_names.clone());
            dropped += m.dropped;
            parts.push(m);
        }
        dropped += points.iter().filter(|p| !stacks.contains_key(&p.year)).count();
        let mut matrix = TrainingMatrix::concat(&parts)?;
        matrix.dropped = dropped;
        Ok(FeaturedPool { points: kept, matrix })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> FeaturedPool {
        FeaturedPool {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            matrix: self.matrix.subset(indices),
        }
    }

    pub fn select_features(&self, names: &[String]) -> Result<FeaturedPool> {
        Ok(FeaturedPool {
            points: self.points.clone(),
            matrix: self.matrix.select_features(names)?,
        })
    }

    pub fn filter_years(&self, keep: impl Fn(i32) -> bool) -> FeaturedPool {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.points[i].year)).collect();
        self.subset(&idx)
    }
}
