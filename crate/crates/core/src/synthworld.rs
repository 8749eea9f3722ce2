//! Seeded synthetic landscapes with known landslide dynamics.
//!
//! The generator builds fractal terrain, a static land-cover base, a
//! birth / revegetation process for landslide patches on steep unlit forest,
//! class-conditional seasonal spectra, blockwise nighttime lights for two
//! sensor generations, and finally cloud and gap degradation of the QA masks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{write_json, NtlCatalog, SceneCatalog};
use crate::chronology::AnnualMapStack;
use crate::error::{Error, Result};
use crate::features::{compute_slope, season_of, Band, DatedScene, Season};
use crate::ntl::NtlCalibration;
use crate::raster::{read_raster, write_raster, GridHeader, MaskCategory, MaskRaster, Raster, NODATA};
use crate::rng::{derive_seed, task_rng, TaskRng};
use crate::sampling::Subclass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub first_year: i32,
    pub years: usize,
    /// Target landslide fraction of all pixels.
    pub landslide_prevalence: f64,
    /// Target built-up (building + road) fraction of all pixels.
    pub builtup_prevalence: f64,
    pub agriculture_fraction: f64,
    pub water_fraction: f64,
    pub cloud_rate: f64,
    pub gap_rate: f64,
    /// 0 keeps built-up and barren spectra apart from bare landslide soil,
    /// 1 makes their daytime spectra identical to it.
    pub confusability: f64,
    /// Seasonal greenness cycle for vegetation and fallow winter fields.
    pub seasonal_swing: bool,
    pub slope_threshold_deg: f64,
    /// Fraction of pixels steeper than the threshold.
    pub steep_fraction: f64,
    /// Annual probability that an active landslide patch revegetates.
    pub revegetation_rate: f64,
    /// Nighttime-light block edge in pixels.
    pub ntl_block: usize,
    pub dmsp_last_year: i32,
    pub viirs_first_year: i32,
    pub spectral_noise: f64,
    pub texture_noise: f64,
    /// Per-year multipliers on the landslide prevalence target.
    pub prevalence_spikes: BTreeMap<i32, f64>,
    /// Per-year cloud rates replacing `cloud_rate`.
    pub cloud_overrides: BTreeMap<i32, f64>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 256,
            height: 256,
            pixel_size: 30.0,
            first_year: 1998,
            years: 20,
            landslide_prevalence: 0.10,
            builtup_prevalence: 0.08,
            agriculture_fraction: 0.18,
            water_fraction: 0.03,
            cloud_rate: 0.15,
            gap_rate: 0.0,
            confusability: 0.5,
            seasonal_swing: true,
            slope_threshold_deg: 15.0,
            steep_fraction: 0.6,
            revegetation_rate: 0.3,
            ntl_block: 8,
            dmsp_last_year: 2013,
            viirs_first_year: 2013,
            spectral_noise: 0.02,
            texture_noise: 0.015,
            prevalence_spikes: BTreeMap::new(),
            cloud_overrides: BTreeMap::new(),
            seed: 1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("landslide_prevalence", self.landslide_prevalence)?;
        unit("builtup_prevalence", self.builtup_prevalence)?;
        unit("agriculture_fraction", self.agriculture_fraction)?;
        unit("water_fraction", self.water_fraction)?;
        unit("cloud_rate", self.cloud_rate)?;
        unit("gap_rate", self.gap_rate)?;
        unit("confusability", self.confusability)?;
        unit("steep_fraction", self.steep_fraction)?;
        unit("revegetation_rate", self.revegetation_rate)?;
        for (y, r) in &self.cloud_overrides {
            unit(&format!("cloud override for {y}"), *r)?;
        }
        if self.width * self.height < 64 {
            return Err(Error::Config(format!("grid {}x{} is below 64 pixels", self.width, self.height)));
        }
        if self.years == 0 {
            return Err(Error::Config("years must be at least 1".into()));
        }
        if self.ntl_block == 0 {
            return Err(Error::Config("ntl_block must be at least 1".into()));
        }
        if !(self.pixel_size > 0.0) {
            return Err(Error::Config("pixel_size must be positive".into()));
        }
        if !(self.slope_threshold_deg > 0.0 && self.slope_threshold_deg < 90.0) {
            return Err(Error::Config("slope_threshold_deg must be in (0, 90)".into()));
        }
        if self.spectral_noise < 0.0 || self.texture_noise < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if self.prevalence_spikes.values().any(|f| !(*f >= 0.0)) {
            return Err(Error::Config("prevalence spike factors must be non-negative".into()));
        }
        Ok(())
    }

    pub fn year_list(&self) -> Vec<i32> {
        (0..self.years as i32).map(|i| self.first_year + i).collect()
    }

    pub fn grid(&self) -> GridHeader {
        GridHeader::new(
            self.width,
            self.height,
            250_000.0,
            2_700_000.0,
            self.pixel_size,
            "synthetic",
        )
        .expect("validated grid")
    }

    pub fn ntl_grid(&self) -> GridHeader {
        let b = self.ntl_block;
        GridHeader::new(
            self.width.div_ceil(b),
            self.height.div_ceil(b),
            250_000.0,
            2_700_000.0,
            self.pixel_size * b as f64,
            "synthetic",
        )
        .expect("validated grid")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub truth: AnnualMapStack,
    /// Subclass codes per year, aligned with `truth`.
    pub landcover: Vec<Raster>,
    pub dem: Raster,
    pub ntl_dmsp: BTreeMap<i32, Raster>,
    pub ntl_viirs: BTreeMap<i32, Raster>,
    pub scenes: BTreeMap<i32, Vec<DatedScene>>,
}

impl SyntheticWorld {
    pub fn years(&self) -> &[i32] {
        self.truth.years()
    }

    pub fn all_scenes(&self) -> Vec<DatedScene> {
        self.scenes.values().flatten().cloned().collect()
    }
}

// Stream tags for derived seeds.
const DEM: u64 = 1;
const LANDCOVER: u64 = 2;
const DYNAMICS: u64 = 3;
const TEXTURE: u64 = 4;
const SCENES: u64 = 5;
const LIGHTS: u64 = 6;
const DEGRADE: u64 = 7;

/// Smoothstep-interpolated lattice noise in [-1, 1].
fn value_noise(w: usize, h: usize, spacing: f64, rng: &mut TaskRng) -> Vec<f64> {
    let gw = (w as f64 / spacing).ceil() as usize + 2;
    let gh = (h as f64 / spacing).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let fy = r as f64 / spacing;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for c in 0..w {
            let fx = c as f64 / spacing;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |y: usize, x: usize| lattice[y * gw + x];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn fractal(w: usize, h: usize, spacing: f64, octaves: usize, rng: &mut TaskRng) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for k in 0..octaves {
        let s = spacing / 2f64.powi(k as i32);
        let amp = (s / spacing).powf(0.9);
        for (o, v) in out.iter_mut().zip(value_noise(w, h, s.max(1.0), rng)) {
            *o += amp * v;
        }
    }
    out
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let i = ((v.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    v[i]
}

fn raster(grid: &GridHeader, values: Vec<f64>) -> Raster {
    Raster::new(grid.clone(), values.into_iter().map(|v| v as f32).collect()).expect("grid-sized values")
}

/// Terrain scaled so that `steep_fraction` of pixels exceed the threshold.
fn generate_dem(cfg: &WorldConfig, grid: &GridHeader) -> Raster {
    let mut rng = task_rng(cfg.seed, &[DEM]);
    let (w, h) = (cfg.width, cfg.height);
    let f = fractal(w, h, 48.0, 5, &mut rng);
    let min = f.iter().copied().fold(f64::INFINITY, f64::min);
    let unit = raster(grid, f.iter().map(|v| v - min).collect());
    let tan: Vec<f64> = compute_slope(&unit)
        .values()
        .iter()
        .map(|d| (*d as f64).to_radians().tan())
        .collect();
    let q = quantile(&tan, 1.0 - cfg.steep_fraction).max(1e-12);
    let k = cfg.slope_threshold_deg.to_radians().tan() / q;
    raster(grid, f.iter().map(|v| 200.0 + k * (v - min)).collect())
}

struct Base {
    codes: Vec<Subclass>,
    lit_blocks: Vec<bool>,
    eligible: Vec<u32>,
}

fn block_of(cfg: &WorldConfig, i: usize) -> usize {
    let (r, c) = (i / cfg.width, i % cfg.width);
    (r / cfg.ntl_block) * cfg.width.div_ceil(cfg.ntl_block) + c / cfg.ntl_block
}

fn generate_base(cfg: &WorldConfig, dem: &Raster) -> Base {
    let mut rng = task_rng(cfg.seed, &[LANDCOVER]);
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    let elev: Vec<f64> = dem.values().iter().map(|&v| v as f64).collect();
    let mut codes = vec![Subclass::Forest; n];

    if cfg.water_fraction > 0.0 {
        let cut = quantile(&elev, cfg.water_fraction);
        for i in 0..n {
            if elev[i] <= cut {
                codes[i] = Subclass::Water;
            }
        }
    }
    // Gravel bars within two pixels of water.
    let near_water: Vec<bool> = (0..n)
        .map(|i| {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            codes[i] != Subclass::Water
                && (-2..=2).any(|dr| {
                    (-2..=2).any(|dc| {
                        let (rr, cc) = (r + dr, c + dc);
                        rr >= 0
                            && cc >= 0
                            && (rr as usize) < h
                            && (cc as usize) < w
                            && codes[rr as usize * w + cc as usize] == Subclass::Water
                    })
                })
        })
        .collect();
    for i in 0..n {
        if near_water[i] {
            codes[i] = Subclass::Barren;
        }
    }

    let b = cfg.ntl_block;
    let bw = w.div_ceil(b);
    let n_blocks = bw * h.div_ceil(b);
    let mut has_water = vec![false; n_blocks];
    let mut block_size = vec![0usize; n_blocks];
    for i in 0..n {
        block_size[block_of(cfg, i)] += 1;
        if codes[i] == Subclass::Water {
            has_water[block_of(cfg, i)] = true;
        }
    }
    let mut candidates: Vec<usize> = (0..n_blocks).filter(|&k| !has_water[k]).collect();
    candidates.shuffle(&mut rng);
    let target = (cfg.builtup_prevalence * n as f64).round() as usize;
    let mut lit_blocks = vec![false; n_blocks];
    let mut built = 0;
    for k in candidates {
        if built >= target {
            break;
        }
        lit_blocks[k] = true;
        built += block_size[k];
    }
    for i in 0..n {
        if lit_blocks[block_of(cfg, i)] {
            let (lr, lc) = ((i / w) % b, (i % w) % b);
            codes[i] = if lr % 4 == 0 || lc % 4 == 0 { Subclass::Road } else { Subclass::Building };
        }
    }

    let field = fractal(w, h, 24.0, 3, &mut rng);
    let open: Vec<usize> = (0..n).filter(|&i| codes[i] == Subclass::Forest).collect();
    let n_agri = ((cfg.agriculture_fraction * n as f64).round() as usize).min(open.len());
    if n_agri > 0 {
        let mut ranked = open.clone();
        ranked.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
        for &i in &ranked[..n_agri] {
            codes[i] = Subclass::Agriculture;
        }
    }

    let slope = compute_slope(dem);
    let threshold = cfg.slope_threshold_deg as f32;
    let eligible = (0..n as u32)
        .filter(|&i| {
            let i = i as usize;
            codes[i] == Subclass::Forest && slope.values()[i] > threshold
        })
        .collect();
    Base {
        codes,
        lit_blocks,
        eligible,
    }
}

struct Dynamics {
    /// Per year, per pixel: birth year of the active patch covering it.
    active: Vec<Vec<Option<i32>>>,
}

fn simulate_dynamics(cfg: &WorldConfig, base: &Base) -> Dynamics {
    let mut rng = task_rng(cfg.seed, &[DYNAMICS]);
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    let mut is_eligible = vec![false; n];
    for &i in &base.eligible {
        is_eligible[i as usize] = true;
    }
    struct Patch {
        pixels: Vec<u32>,
        born: i32,
    }
    let mut alive: Vec<Patch> = Vec::new();
    let mut cover: Vec<Option<i32>> = vec![None; n];
    let mut covered = 0usize;
    let mut out = Vec::with_capacity(cfg.years);
    for year in cfg.year_list() {
        if !out.is_empty() {
            let mut keep = Vec::with_capacity(alive.len());
            for p in alive.drain(..) {
                if rng.random_bool(cfg.revegetation_rate) {
                    for &i in &p.pixels {
                        cover[i as usize] = None;
                    }
                    covered -= p.pixels.len();
                } else {
                    keep.push(p);
                }
            }
            alive = keep;
        }
        let factor = cfg.prevalence_spikes.get(&year).copied().unwrap_or(1.0);
        let target = ((cfg.landslide_prevalence * factor * n as f64).round() as usize).min(base.eligible.len() * 9 / 10);
        let mut misses = 0;
        while covered < target && !base.eligible.is_empty() && misses < 10_000 {
            let center = base.eligible[rng.random_range(0..base.eligible.len())] as usize;
            if cover[center].is_some() {
                misses += 1;
                continue;
            }
            let radius: f64 = rng.random_range(1.5..4.5);
            let reach = radius.ceil() as isize;
            let (r0, c0) = ((center / w) as isize, (center % w) as isize);
            let mut pixels = Vec::new();
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let (r, c) = (r0 + dr, c0 + dc);
                    if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
                        continue;
                    }
                    let i = r as usize * w + c as usize;
                    if ((dr * dr + dc * dc) as f64).sqrt() <= radius && is_eligible[i] && cover[i].is_none() {
                        cover[i] = Some(year);
                        pixels.push(i as u32);
                    }
                }
            }
            covered += pixels.len();
            alive.push(Patch { pixels, born: year });
        }
        debug_assert!(alive.iter().all(|p| p.born <= year));
        out.push(cover.clone());
    }
    Dynamics { active: out }
}

/// Mean reflectance (blue, green, red, nir, swir1, swir2).
type Spectrum = [f64; 6];

const BARE_SOIL: Spectrum = [0.10, 0.13, 0.17, 0.26, 0.33, 0.27];
const FOREST_SUMMER: Spectrum = [0.03, 0.06, 0.04, 0.36, 0.16, 0.08];
const FOREST_WINTER: Spectrum = [0.04, 0.07, 0.06, 0.27, 0.18, 0.10];
const CROP_SUMMER: Spectrum = [0.04, 0.09, 0.05, 0.42, 0.20, 0.10];
const CROP_SPRING: Spectrum = [0.06, 0.09, 0.09, 0.30, 0.24, 0.16];
const FALLOW: Spectrum = [0.10, 0.13, 0.16, 0.25, 0.31, 0.25];
const STUBBLE: Spectrum = [0.07, 0.10, 0.11, 0.31, 0.25, 0.17];
const BUILDING: Spectrum = [0.13, 0.13, 0.13, 0.17, 0.20, 0.18];
const ROAD: Spectrum = [0.08, 0.09, 0.10, 0.12, 0.15, 0.14];
const GRAVEL: Spectrum = [0.13, 0.16, 0.19, 0.22, 0.27, 0.22];
const WATER: Spectrum = [0.06, 0.07, 0.05, 0.03, 0.02, 0.01];

fn lerp(a: &Spectrum, b: &Spectrum, t: f64) -> Spectrum {
    std::array::from_fn(|k| a[k] * (1.0 - t) + b[k] * t)
}

/// Spectral season of an acquisition; autumn scenes look like spring.
fn spectral_season(date: NaiveDate) -> Season {
    season_of(date).map(|(s, _)| s).unwrap_or(Season::Spring)
}

fn class_mean(cfg: &WorldConfig, class: Subclass, season: Season, landslide_age: i32) -> Spectrum {
    let swing = cfg.seasonal_swing;
    let forest = if !swing {
        FOREST_SUMMER
    } else {
        match season {
            Season::Summer => FOREST_SUMMER,
            Season::Spring => lerp(&FOREST_SUMMER, &FOREST_WINTER, 0.5),
            Season::Winter => FOREST_WINTER,
        }
    };
    let c = cfg.confusability;
    match class {
        Subclass::Landslide => lerp(&BARE_SOIL, &forest, 0.08 * landslide_age.clamp(0, 3) as f64),
        Subclass::Forest => forest,
        Subclass::Agriculture => {
            if !swing {
                CROP_SUMMER
            } else {
                match season {
                    Season::Summer => CROP_SUMMER,
                    Season::Spring => CROP_SPRING,
                    Season::Winter => lerp(&STUBBLE, &FALLOW, c),
                }
            }
        }
        Subclass::Building => lerp(&BUILDING, &BARE_SOIL, c),
        Subclass::Road => lerp(&ROAD, &BARE_SOIL, c),
        Subclass::Barren => lerp(&GRAVEL, &BARE_SOIL, c),
        Subclass::Water => WATER,
    }
}

/// Acquisition dates for a year: two per season plus one autumn scene.
pub fn scene_dates(year: i32) -> Vec<NaiveDate> {
    [(1, 12), (2, 20), (4, 8), (5, 14), (7, 9), (8, 18), (10, 15)]
        .iter()
        .map(|&(m, d)| NaiveDate::from_ymd_opt(year, m, d).expect("valid date"))
        .collect()
}

fn generate_scene(
    cfg: &WorldConfig,
    grid: &GridHeader,
    codes: &[Subclass],
    ages: &[i32],
    texture: &[[f32; 6]],
    date: NaiveDate,
    rng: &mut TaskRng,
) -> DatedScene {
    let season = spectral_season(date);
    let noise = Normal::new(0.0, cfg.spectral_noise).expect("finite sd");
    let mut bands: Vec<Vec<f32>> = vec![Vec::with_capacity(codes.len()); 6];
    for i in 0..codes.len() {
        let mean = class_mean(cfg, codes[i], season, ages[i]);
        for k in 0..6 {
            let v = mean[k] + texture[i][k] as f64 + noise.sample(rng);
            bands[k].push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let bands = Band::ALL
        .iter()
        .zip(bands)
        .map(|(&b, v)| (b, Raster::new(grid.clone(), v).expect("grid-sized band")))
        .collect();
    DatedScene::new(date, bands, MaskRaster::clear(grid.clone())).expect("synthetic scene is valid")
}

fn generate_lights(cfg: &WorldConfig, base: &Base) -> (BTreeMap<i32, Raster>, BTreeMap<i32, Raster>) {
    let mut rng = task_rng(cfg.seed, &[LIGHTS]);
    let ntl_grid = cfg.ntl_grid();
    let n_blocks = ntl_grid.len();
    let base_dn: Vec<f64> = (0..n_blocks)
        .map(|k| {
            if base.lit_blocks[k] {
                rng.random_range(38.0..55.0)
            } else {
                rng.random_range(5.0..7.5)
            }
        })
        .collect();
    let jitter = Normal::new(0.0f64, 1.0).unwrap();
    let rad_noise = Normal::new(0.0f64, 0.02).unwrap();
    let cal = NtlCalibration::PUBLISHED;
    let mut dmsp = BTreeMap::new();
    let mut viirs = BTreeMap::new();
    for (t, year) in cfg.year_list().into_iter().enumerate() {
        let dn: Vec<f64> = (0..n_blocks)
            .map(|k| {
                let v = if base.lit_blocks[k] {
                    base_dn[k] + 0.4 * t as f64 + jitter.sample(&mut rng)
                } else {
                    base_dn[k] + 0.3 * jitter.sample(&mut rng)
                };
                v.clamp(5.0, 63.0)
            })
            .collect();
        let rad: Vec<f64> = dn.iter().map(|&d| cal.invert_value(d) * rad_noise.sample(&mut rng).exp()).collect();
        if year <= cfg.dmsp_last_year {
            dmsp.insert(year, raster(&ntl_grid, dn.iter().map(|d| d.round()).collect()));
        }
        if year >= cfg.viirs_first_year {
            viirs.insert(year, raster(&ntl_grid, rad));
        }
    }
    (dmsp, viirs)
}

pub fn generate_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    if cfg.landslide_prevalence == 0.0 {
        log::warn!("landslide prevalence is zero; truth maps will hold no landslides");
    }
    let grid = cfg.grid();
    let dem = generate_dem(cfg, &grid);
    let base = generate_base(cfg, &dem);
    if (base.eligible.len() as f64) < cfg.landslide_prevalence * grid.len() as f64 {
        log::warn!(
            "only {} pixels are eligible for landslides; prevalence target will not be met",
            base.eligible.len()
        );
    }
    let dynamics = simulate_dynamics(cfg, &base);
    let years = cfg.year_list();

    let texture: Vec<[f32; 6]> = {
        let mut rng = task_rng(cfg.seed, &[TEXTURE]);
        let d = Normal::new(0.0, cfg.texture_noise).expect("finite sd");
        (0..grid.len())
            .map(|_| std::array::from_fn(|_| d.sample(&mut rng) as f32))
            .collect()
    };

    let per_year: Vec<(Raster, Raster, Vec<DatedScene>)> = years
        .par_iter()
        .enumerate()
        .map(|(t, &year)| {
            let cover = &dynamics.active[t];
            let codes: Vec<Subclass> = (0..grid.len())
                .map(|i| if cover[i].is_some() { Subclass::Landslide } else { base.codes[i] })
                .collect();
            let ages: Vec<i32> = cover.iter().map(|b| b.map_or(0, |born| year - born)).collect();
            let truth = Raster::new(
                grid.clone(),
                codes.iter().map(|&c| if c == Subclass::Landslide { 1.0 } else { 0.0 }).collect(),
            )
            .expect("grid-sized truth");
            let landcover = Raster::new(grid.clone(), codes.iter().map(|c| c.code() as f32).collect())
                .expect("grid-sized land cover");
            let scenes = scene_dates(year)
                .into_iter()
                .enumerate()
                .map(|(k, date)| {
                    let mut rng = task_rng(cfg.seed, &[SCENES, year as u64, k as u64]);
                    generate_scene(cfg, &grid, &codes, &ages, &texture, date, &mut rng)
                })
                .collect();
            (truth, landcover, scenes)
        })
        .collect();

    let (ntl_dmsp, ntl_viirs) = generate_lights(cfg, &base);
    let mut truth_maps = Vec::with_capacity(years.len());
    let mut landcover = Vec::with_capacity(years.len());
    let mut scenes = BTreeMap::new();
    for (&year, (t, l, s)) in years.iter().zip(per_year) {
        truth_maps.push(t);
        landcover.push(l);
        scenes.insert(year, s);
    }
    let world = SyntheticWorld {
        config: cfg.clone(),
        truth: AnnualMapStack::new(years, truth_maps)?,
        landcover,
        dem,
        ntl_dmsp,
        ntl_viirs,
        scenes,
    };
    let params = DegradeParams {
        cloud_rate: cfg.cloud_rate,
        gap_rate: cfg.gap_rate,
        cloud_overrides: cfg.cloud_overrides.clone(),
        seed: derive_seed(cfg.seed, &[DEGRADE]),
    };
    degrade_with(world, &params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradeParams {
    pub cloud_rate: f64,
    pub gap_rate: f64,
    pub cloud_overrides: BTreeMap<i32, f64>,
    pub seed: u64,
}

pub fn degrade(world: SyntheticWorld, cloud_rate: f64, gap_rate: f64, seed: u64) -> Result<SyntheticWorld> {
    degrade_with(
        world,
        &DegradeParams {
            cloud_rate,
            gap_rate,
            cloud_overrides: BTreeMap::new(),
            seed,
        },
    )
}

/// Adds cloud blobs and diagonal gap stripes to every scene. Gaps are drawn
/// last and overwrite clouds. Truth is untouched.
pub fn degrade_with(mut world: SyntheticWorld, params: &DegradeParams) -> Result<SyntheticWorld> {
    let rates = std::iter::once(params.cloud_rate)
        .chain(std::iter::once(params.gap_rate))
        .chain(params.cloud_overrides.values().copied());
    for r in rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Parameter(format!("degradation rate {r} outside [0, 1]")));
        }
    }
    let scenes = std::mem::take(&mut world.scenes);
    world.scenes = scenes
        .into_par_iter()
        .map(|(year, list)| {
            let cloud_rate = params.cloud_overrides.get(&year).copied().unwrap_or(params.cloud_rate);
            let out = list
                .into_iter()
                .enumerate()
                .map(|(k, s)| {
                    let mut rng = task_rng(params.seed, &[year as u64, k as u64]);
                    degrade_scene(s, cloud_rate, params.gap_rate, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((year, out))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(world)
}

fn degrade_scene(scene: DatedScene, cloud_rate: f64, gap_rate: f64, rng: &mut TaskRng) -> Result<DatedScene> {
    if cloud_rate == 0.0 && gap_rate == 0.0 {
        return Ok(scene);
    }
    let (date, mut bands, mut qa) = scene.into_parts();
    let grid = qa.header().clone();
    let (w, h) = (grid.width, grid.height);
    let n = grid.len();
    let mut cloud: Vec<Option<(MaskCategory, f32)>> = vec![None; n];
    if cloud_rate > 0.0 {
        let field = fractal(w, h, 16.0, 2, rng);
        let (cut, core) = if cloud_rate >= 1.0 {
            (f64::NEG_INFINITY, quantile(&field, 0.5))
        } else {
            (quantile(&field, 1.0 - cloud_rate), quantile(&field, 1.0 - cloud_rate / 2.0))
        };
        for i in 0..n {
            if field[i] > cut || cloud_rate >= 1.0 {
                let cat = if field[i] > core { MaskCategory::CloudHigh } else { MaskCategory::CloudMedium };
                let bright = (0.45 + 0.3 * (field[i] - cut.max(-2.0)).clamp(0.0, 1.0)) as f32;
                cloud[i] = Some((cat, bright));
            }
        }
    }
    let period = 24.0;
    let offset: f64 = rng.random_range(0.0..period);
    let in_gap = |i: usize| {
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        gap_rate > 0.0 && ((c + 0.3 * r + offset) / period).rem_euclid(1.0) < gap_rate
    };
    let cats = qa.categories_mut();
    let mut gaps = vec![false; n];
    for i in 0..n {
        if let Some((cat, _)) = cloud[i] {
            cats[i] = cat;
        }
        if in_gap(i) {
            cats[i] = MaskCategory::Gap;
            gaps[i] = true;
        }
    }
    for r in bands.values_mut() {
        let values: Vec<f32> = r
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if gaps[i] {
                    NODATA
                } else if let Some((_, bright)) = cloud[i] {
                    bright
                } else {
                    v
                }
            })
            .collect();
        *r = Raster::new(grid.clone(), values)?;
    }
    debug_assert!(h * w == n);
    DatedScene::new(date, bands, qa)
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldManifest {
    pub config: WorldConfig,
    pub years: Vec<i32>,
    pub dem: String,
    pub scenes: String,
    pub ntl: String,
    pub truth: BTreeMap<i32, String>,
    pub landcover: BTreeMap<i32, String>,
}

/// Layout under `dir`:
/// `observed/` holds the DEM, scene catalog and nighttime-light catalog;
/// `truth/` holds annual landslide and land-cover maps.
pub fn save_world(world: &SyntheticWorld, dir: &Path) -> Result<WorldManifest> {
    let observed = dir.join("observed");
    let truth = dir.join("truth");
    for d in [&observed, &truth] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    write_raster(&observed.join("dem"), &world.dem)?;
    SceneCatalog::write(&observed.join("scenes.json"), "scenes", &world.all_scenes())?;
    NtlCatalog::write(&observed.join("ntl.json"), "ntl", &world.ntl_dmsp, &world.ntl_viirs)?;
    let mut manifest = WorldManifest {
        config: world.config.clone(),
        years: world.years().to_vec(),
        dem: "observed/dem".into(),
        scenes: "observed/scenes.json".into(),
        ntl: "observed/ntl.json".into(),
        truth: BTreeMap::new(),
        landcover: BTreeMap::new(),
    };
    for (i, &year) in world.years().iter().enumerate() {
        let t = format!("truth/landslide_{year}");
        let l = format!("truth/landcover_{year}");
        write_raster(&dir.join(&t), &world.truth.maps()[i])?;
        write_raster(&dir.join(&l), &world.landcover[i])?;
        manifest.truth.insert(year, t);
        manifest.landcover.insert(year, l);
    }
    write_json(&dir.join("world.json"), &manifest)?;
    Ok(manifest)
}

/// Reference land-cover rasters written by [`save_world`], keyed by year.
pub fn load_reference(dir: &Path, years: &[i32]) -> Result<BTreeMap<i32, Raster>> {
    years
        .iter()
        .map(|&y| {
            let stem: PathBuf = dir.join(format!("landcover_{y}"));
            Ok((y, read_raster(&stem)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::CategorySet;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            width: 64,
            height: 64,
            years: 4,
            first_year: 2011,
            seed,
            ..WorldConfig::default()
        }
    }

    fn scene_values(w: &SyntheticWorld) -> Vec<u32> {
        w.scenes
            .values()
            .flatten()
            .flat_map(|s| Band::ALL.iter().flat_map(move |&b| s.band(b).values().iter().map(|v| v.to_bits())))
            .collect()
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_world(&small(3)).unwrap();
        let b = generate_world(&small(3)).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.dem, b.dem);
        assert_eq!(scene_values(&a), scene_values(&b));
        let c = generate_world(&small(4)).unwrap();
        assert_ne!(a.dem, c.dem);
    }

    #[test]
    fn landslides_only_on_steep_unlit_pixels() {
        let cfg = small(5);
        let w = generate_world(&cfg).unwrap();
        let slope = compute_slope(&w.dem);
        let mut total = 0;
        for m in w.truth.maps() {
            for (i, &v) in m.values().iter().enumerate() {
                if v == 1.0 {
                    total += 1;
                    assert!(slope.values()[i] > cfg.slope_threshold_deg as f32);
                }
            }
        }
        assert!(total > 0);
        let prevalence = w.truth.maps()[0].values().iter().filter(|&&v| v == 1.0).count() as f64 / (64.0 * 64.0);
        assert!((prevalence - 0.10).abs() < 0.02, "{prevalence}");
    }

    #[test]
    fn builtup_is_brighter_at_night() {
        let cfg = small(6);
        let w = generate_world(&cfg).unwrap();
        let year = 2012;
        let ntl = crate::raster::resample_nearest(&w.ntl_dmsp[&year], &cfg.grid()).unwrap();
        let lc = &w.landcover[1];
        let mean = |f: &dyn Fn(f32) -> bool| {
            let v: Vec<f64> = lc
                .values()
                .iter()
                .zip(ntl.values())
                .filter(|(c, _)| f(**c))
                .map(|(_, n)| *n as f64)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let built = mean(&|c| c == 1.0 || c == 2.0);
        let slide = mean(&|c| c == 0.0);
        assert!(built - slide > 20.0, "{built} vs {slide}");
        assert_eq!(w.ntl_viirs.keys().copied().collect::<Vec<_>>(), vec![2013, 2014]);
        assert_eq!(w.ntl_dmsp.keys().copied().collect::<Vec<_>>(), vec![2011, 2012, 2013]);
    }

    #[test]
    fn viirs_inverts_published_calibration() {
        let w = generate_world(&small(7)).unwrap();
        let fit = crate::ntl::fit_calibration(&w.ntl_viirs[&2013], &w.ntl_dmsp[&2013]).unwrap();
        assert!((fit.slope - NtlCalibration::PUBLISHED.slope).abs() < 1.5, "{fit:?}");
        assert!(fit.correlation > 0.99);
    }

    #[test]
    fn degrade_identity_and_gap_fraction() {
        let cfg = WorldConfig { cloud_rate: 0.0, ..small(8) };
        let w = generate_world(&cfg).unwrap();
        let before: Vec<Vec<MaskCategory>> = w.all_scenes().iter().map(|s| s.qa.categories().to_vec()).collect();
        let same = degrade(w.clone(), 0.0, 0.0, 1).unwrap();
        let after: Vec<Vec<MaskCategory>> = same.all_scenes().iter().map(|s| s.qa.categories().to_vec()).collect();
        assert_eq!(before, after);

        let g = degrade(w.clone(), 0.2, 0.1, 2).unwrap();
        for s in g.all_scenes() {
            let frac = s.qa.count(MaskCategory::Gap) as f64 / s.qa.categories().len() as f64;
            assert!((frac - 0.1).abs() <= 0.02, "{frac}");
        }
        let g2 = degrade(w, 0.2, 0.1, 2).unwrap();
        let masks = |x: &SyntheticWorld| x.all_scenes().iter().map(|s| s.qa.categories().to_vec()).collect::<Vec<_>>();
        assert_eq!(masks(&g), masks(&g2));
    }

    #[test]
    fn cloud_rate_tracks_config_and_overrides() {
        let mut cfg = WorldConfig { cloud_rate: 0.3, ..small(9) };
        cfg.cloud_overrides.insert(2012, 1.0);
        let w = generate_world(&cfg).unwrap();
        for (year, list) in &w.scenes {
            for s in list {
                let cloudy = s
                    .qa
                    .categories()
                    .iter()
                    .filter(|c| CategorySet::CLOUD_AND_GAP.contains(**c))
                    .count() as f64
                    / s.qa.categories().len() as f64;
                let expected = if *year == 2012 { 1.0 } else { 0.3 };
                assert!((cloudy - expected).abs() < 0.02, "{year}: {cloudy}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(WorldConfig { confusability: 1.5, ..small(1) }.validate().is_err());
        assert!(WorldConfig { width: 4, height: 4, ..small(1) }.validate().is_err());
        let zero = WorldConfig { landslide_prevalence: 0.0, ..small(1) };
        let w = generate_world(&zero).unwrap();
        assert!(w.truth.maps().iter().all(|m| m.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn saved_world_separates_truth() {
        let w = generate_world(&WorldConfig { years: 2, ..small(10) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = save_world(&w, dir.path()).unwrap();
        assert!(dir.path().join("observed/scenes.json").exists());
        assert!(dir.path().join("truth").join("landslide_2011.hdr.json").exists());
        let cat = SceneCatalog::load(&dir.path().join(&m.scenes)).unwrap();
        assert_eq!(cat.scenes.len(), 14);
        let back = cat.read_scenes(&dir.path().join(&m.scenes), |_| true).unwrap();
        assert_eq!(back[0].band(Band::Red), w.scenes[&2011][0].band(Band::Red));
        let refs = load_reference(&dir.path().join("truth"), &[2011, 2012]).unwrap();
        assert_eq!(refs[&2012], w.landcover[1]);
    }
}
