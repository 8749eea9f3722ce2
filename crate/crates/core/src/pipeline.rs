//! End-to-end orchestration: composites, slope, nighttime-light
//! harmonization, sampling, class-ratio sweep, training, annual
//! classification, assessment and chronology.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::catalog::{write_json, NtlCatalog, SceneCatalog};
use crate::chronology::{area_composition, stack_metrics, write_area_csv, AnnualMapStack, AreaComposition, MetricsRasters};
use crate::error::{Error, Result};
use crate::evaluation::{
    beta_grid, beta_sweep, find_optimal_beta, replicate_assessment, write_accuracy_csv, write_sweep_csv,
    AccuracyReport, BetaSweepResult, SweepParams,
};
use crate::features::{
    assemble_stack, compute_slope, seasonal_composite, CompositeLayer, DatedScene, FeatureStack, ModelVariant,
    Season, SeasonalComposite,
};
use crate::forest::{classify_stack, train_forest, ForestParams, RandomForestModel};
use crate::ntl::{apply_calibration, fit_calibration, NtlCalibration};
use crate::raster::{header_path, read_raster, resample_nearest, write_raster, GridHeader, Raster};
use crate::report;
use crate::rng::{derive_seed, task_rng};
use crate::sampling::{
    beta_allocate_by_year, morans_correlogram, pool_quotas, sample_stratified, Contiguity, FeaturedPool,
    SamplePoint, SampleSet, Subclass,
};
use crate::synthworld::{generate_world, save_world, SyntheticWorld, WorldConfig};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    /// Scene catalog JSON.
    pub scenes: PathBuf,
    /// DEM raster stem.
    pub dem: PathBuf,
    /// Nighttime-light catalog JSON.
    pub ntl: PathBuf,
    /// Directory of `landcover_<year>` reference rasters.
    pub reference: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub min_distance: f64,
    /// Per-year training pool depth.
    pub pool_landslide: usize,
    pub pool_non: usize,
    pub pool_min_per_subclass: usize,
    /// Per-year validation pool depth, before removal near training points.
    pub validation_landslide: usize,
    pub validation_non: usize,
    pub correlogram_max_lag: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            min_distance: 100.0,
            pool_landslide: 2000,
            pool_non: 8000,
            pool_min_per_subclass: 300,
            validation_landslide: 1000,
            validation_non: 8000,
            correlogram_max_lag: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_step: f64,
    pub folds: usize,
    pub total_train: usize,
    pub min_per_subclass: usize,
    pub eval_landslide: usize,
    pub eval_non: usize,
    pub n_trees: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            beta_start: 1.0,
            beta_end: 5.0,
            beta_step: 0.1,
            folds: 50,
            total_train: 2000,
            min_per_subclass: 100,
            eval_landslide: 500,
            eval_non: 5500,
            n_trees: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_node_size: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            min_node_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessmentConfig {
    pub replications: usize,
    pub n_landslide: usize,
    pub n_non: usize,
}

impl Default for AssessmentConfig {
    fn default() -> Self {
        AssessmentConfig {
            replications: 100,
            n_landslide: 500,
            n_non: 5500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Generator settings; used by `simulate`, and by the other stages when
    /// `inputs` is absent (the world is then simulated into `<out>/world`).
    pub world: Option<WorldConfig>,
    pub inputs: Option<InputPaths>,
    /// Years to process; defaults to every year with scenes.
    pub years: Option<Vec<i32>>,
    pub variant: String,
    pub training_years: Vec<i32>,
    /// Years to assess; defaults to all processed years.
    pub assessment_years: Option<Vec<i32>>,
    pub ntl_overlap_year: i32,
    pub sampling: SamplingConfig,
    pub sweep: SweepConfig,
    /// Fixed class ratio; skips the sweep when set.
    pub beta: Option<f64>,
    /// Pretrained model; skips training when set.
    pub model: Option<PathBuf>,
    pub forest: ForestConfig,
    pub assessment: AssessmentConfig,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: None,
            inputs: None,
            years: None,
            variant: "multi+ntl".into(),
            training_years: vec![2005, 2010, 2015],
            assessment_years: None,
            ntl_overlap_year: 2013,
            sampling: SamplingConfig::default(),
            sweep: SweepConfig::default(),
            beta: None,
            model: None,
            forest: ForestConfig::default(),
            assessment: AssessmentConfig::default(),
            seed: 0,
            output_dir: None,
            workers: None,
        }
    }
}

impl RunConfig {
    /// Parses a JSON config; relative paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(inp) = cfg.inputs.as_mut() {
            fix(&mut inp.scenes);
            fix(&mut inp.dem);
            fix(&mut inp.ntl);
            fix(&mut inp.reference);
        }
        if let Some(m) = cfg.model.as_mut() {
            fix(m);
        }
        if let Some(o) = cfg.output_dir.as_mut() {
            fix(o);
        }
        Ok(cfg)
    }

    pub fn variant(&self) -> Result<ModelVariant> {
        ModelVariant::parse(&self.variant).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.variant()?;
        if self.inputs.is_none() && self.world.is_none() {
            return Err(Error::Config("config needs either `inputs` or `world`".into()));
        }
        if let Some(w) = &self.world {
            w.validate()?;
        }
        if self.training_years.is_empty() {
            return Err(Error::Config("training_years is empty".into()));
        }
        if !(self.sampling.min_distance >= 0.0) {
            return Err(Error::Config("sampling.min_distance must be >= 0".into()));
        }
        if self.sweep.folds == 0 || self.sweep.n_trees == 0 || self.forest.n_trees == 0 {
            return Err(Error::Config("folds and tree counts must be at least 1".into()));
        }
        if let Some(b) = self.beta {
            if !(b >= 1.0) {
                return Err(Error::Config(format!("beta must be >= 1, got {b}")));
            }
        }
        beta_grid(self.sweep.beta_start, self.sweep.beta_end, self.sweep.beta_step)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn sweep_params(&self) -> Result<SweepParams> {
        Ok(SweepParams {
            grid: beta_grid(self.sweep.beta_start, self.sweep.beta_end, self.sweep.beta_step)?,
            folds: self.sweep.folds,
            total_train: self.sweep.total_train,
            min_per_subclass: self.sweep.min_per_subclass,
            eval_landslide: self.sweep.eval_landslide,
            eval_non: self.sweep.eval_non,
            n_trees: self.sweep.n_trees,
            mtry: self.forest.mtry,
            seed: derive_seed(self.seed, &[SWEEP]),
        })
    }
}

/// Every input file referenced by `inputs`; a missing one is a configuration
/// error naming the path.
pub fn validate_inputs(inputs: &InputPaths) -> Result<()> {
    let missing = |p: &Path| Error::Config(format!("input not found: {}", p.display()));
    if !header_path(&inputs.dem).exists() {
        return Err(missing(&header_path(&inputs.dem)));
    }
    for p in [&inputs.scenes, &inputs.ntl] {
        if !p.exists() {
            return Err(missing(p));
        }
    }
    if !inputs.reference.is_dir() {
        return Err(missing(&inputs.reference));
    }
    let scenes = SceneCatalog::load(&inputs.scenes)?;
    let ntl = NtlCatalog::load(&inputs.ntl)?;
    for p in scenes
        .referenced_headers(&inputs.scenes)
        .into_iter()
        .chain(ntl.referenced_headers(&inputs.ntl))
    {
        if !p.exists() {
            return Err(missing(&p));
        }
    }
    Ok(())
}

// Seed stream tags.
const TRAIN_POOL: u64 = 11;
const VALIDATION_POOL: u64 = 12;
const SWEEP: u64 = 13;
const FINAL: u64 = 14;
const ASSESS: u64 = 15;

// ---------------------------------------------------------------------------
// In-memory stages

/// Observable inputs for a run, as loaded from disk or taken from a world.
pub struct Observed {
    pub scenes: Vec<DatedScene>,
    pub dem: Raster,
    pub dmsp: BTreeMap<i32, Raster>,
    pub viirs: BTreeMap<i32, Raster>,
}

impl Observed {
    /// The observable part of a synthetic world.
    pub fn from_world(world: &SyntheticWorld) -> Observed {
        Observed {
            scenes: world.all_scenes(),
            dem: world.dem.clone(),
            dmsp: world.ntl_dmsp.clone(),
            viirs: world.ntl_viirs.clone(),
        }
    }
}

/// Reference land-cover maps of a synthetic world keyed by year.
pub fn world_reference(world: &SyntheticWorld) -> BTreeMap<i32, Raster> {
    world.years().iter().copied().zip(world.landcover.iter().cloned()).collect()
}

pub struct Prepared {
    pub grid: GridHeader,
    pub years: Vec<i32>,
    pub slope: Raster,
    pub calibration: Option<NtlCalibration>,
    /// Harmonized DMSP-scale nighttime light on the main grid.
    pub ntl: BTreeMap<i32, Raster>,
    pub composites: BTreeMap<i32, BTreeMap<Season, SeasonalComposite>>,
    /// Full stacks: every season, slope, and nighttime light where available.
    pub stacks: BTreeMap<i32, FeatureStack>,
}

pub fn composite_years(scenes: &[DatedScene], grid: &GridHeader, years: &[i32]) -> Result<BTreeMap<i32, BTreeMap<Season, SeasonalComposite>>> {
    years
        .iter()
        .map(|&y| {
            let per_season = Season::ALL
                .iter()
                .map(|&s| Ok((s, seasonal_composite(scenes, &s.definition(), y, grid)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok((y, per_season))
        })
        .collect()
}

/// DMSP values up to and including the overlap year; calibrated VIIRS after.
/// Returns the fitted calibration when the overlap year has both sensors.
pub fn harmonize_ntl(
    dmsp: &BTreeMap<i32, Raster>,
    viirs: &BTreeMap<i32, Raster>,
    overlap_year: i32,
    grid: &GridHeader,
    years: &[i32],
) -> Result<(Option<NtlCalibration>, BTreeMap<i32, Raster>)> {
    let calibration = match (dmsp.get(&overlap_year), viirs.get(&overlap_year)) {
        (Some(d), Some(v)) => {
            let v = if v.header().is_aligned(d.header()) { v.clone() } else { resample_nearest(v, d.header())? };
            Some(fit_calibration(&v, d)?)
        }
        _ => None,
    };
    let mut out = BTreeMap::new();
    for &y in years {
        let native = match (dmsp.get(&y), viirs.get(&y)) {
            (Some(d), _) if y <= overlap_year => Some(d.clone()),
            (_, Some(v)) => match &calibration {
                Some(c) => Some(apply_calibration(v, c)?),
                None => {
                    log::warn!("no calibration available; VIIRS {y} omitted");
                    None
                }
            },
            (Some(d), None) => Some(d.clone()),
            (None, None) => None,
        };
        if let Some(r) = native {
            out.insert(y, resample_nearest(&r, grid)?);
        }
    }
    Ok((calibration, out))
}

pub fn prepare(observed: &Observed, years: &[i32], overlap_year: i32) -> Result<Prepared> {
    let grid = observed.dem.header().clone();
    let composites = composite_years(&observed.scenes, &grid, years).map_err(|e| e.in_stage("composite"))?;
    let slope = compute_slope(&observed.dem);
    let (calibration, ntl) =
        harmonize_ntl(&observed.dmsp, &observed.viirs, overlap_year, &grid, years).map_err(|e| e.in_stage("calibrate-ntl"))?;
    let stacks = full_stacks(&composites, &slope, &ntl)?;
    Ok(Prepared {
        grid,
        years: years.to_vec(),
        slope,
        calibration,
        ntl,
        composites,
        stacks,
    })
}

pub struct Pools {
    pub train_points: SampleSet,
    pub validation_points: SampleSet,
    pub train: FeaturedPool,
    pub validation: FeaturedPool,
}

/// Stratified training pools for `training_years` and validation pools for
/// `validation_years`.
///
/// In a year that is both, one joint draw under the distance rule is split
/// per subclass in proportion to the two quotas, so the training and
/// validation points are mutually at least `min_distance` apart. Validation
/// points in other years are used as drawn.
pub fn draw_pools(
    reference: &BTreeMap<i32, Raster>,
    stacks: &BTreeMap<i32, FeatureStack>,
    training_years: &[i32],
    validation_years: &[i32],
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Pools> {
    let mut years: Vec<i32> = training_years.iter().chain(validation_years).copied().collect();
    years.sort_unstable();
    years.dedup();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for y in years {
        let labels = reference
            .get(&y)
            .ok_or_else(|| Error::Config(format!("no reference map for year {y}")))?;
        let is_train = training_years.contains(&y);
        let is_val = validation_years.contains(&y);
        let tq: BTreeMap<Subclass, usize> = if is_train {
            pool_quotas(labels, cfg.pool_landslide, cfg.pool_non, cfg.pool_min_per_subclass).into_iter().collect()
        } else {
            BTreeMap::new()
        };
        let vq: BTreeMap<Subclass, usize> = if is_val {
            pool_quotas(labels, cfg.validation_landslide, cfg.validation_non, 0).into_iter().collect()
        } else {
            BTreeMap::new()
        };
        let quotas: Vec<(Subclass, usize)> = Subclass::ALL
            .iter()
            .map(|s| (*s, tq.get(s).copied().unwrap_or(0) + vq.get(s).copied().unwrap_or(0)))
            .collect();
        let mut rng = task_rng(seed, &[TRAIN_POOL, y as u64]);
        let drawn = sample_stratified(labels, y, &quotas, cfg.min_distance, &mut rng)?;
        if drawn.saturated {
            log::warn!("sample pool for {y} saturated at {} points", drawn.len());
        }
        let mut by_class: BTreeMap<Subclass, Vec<SamplePoint>> = BTreeMap::new();
        for p in drawn.points {
            by_class.entry(p.subclass).or_default().push(p);
        }
        let mut rng = task_rng(seed, &[VALIDATION_POOL, y as u64]);
        for (s, mut pts) in by_class {
            let (t, v) = (tq.get(&s).copied().unwrap_or(0), vq.get(&s).copied().unwrap_or(0));
            pts.shuffle(&mut rng);
            let n_val = if t + v == 0 { 0 } else { (pts.len() * v).div_ceil(t + v).min(pts.len()) };
            let rest = pts.split_off(n_val);
            validation.extend(pts);
            train.extend(rest);
        }
    }
    let train_points = SampleSet::new(train, cfg.min_distance);
    let validation_points = SampleSet::new(validation, cfg.min_distance);
    let train = FeaturedPool::build(&train_points.points, stacks)?;
    let validation = FeaturedPool::build(&validation_points.points, stacks)?;
    Ok(Pools {
        train_points,
        validation_points,
        train,
        validation,
    })
}

/// Final forest on a class-ratio-adjusted draw from the training pool.
pub fn train_final(pools: &Pools, variant: &ModelVariant, beta: f64, cfg: &RunConfig) -> Result<RandomForestModel> {
    let mut rng = task_rng(cfg.seed, &[FINAL, 0]);
    let idx = beta_allocate_by_year(&pools.train.points, beta, cfg.sweep.total_train, cfg.sweep.min_per_subclass, &mut rng)?;
    let matrix = pools.train.matrix.select_features(&variant.layer_names())?.subset(&idx);
    let params = ForestParams {
        n_trees: cfg.forest.n_trees,
        mtry: cfg.forest.mtry,
        min_node_size: cfg.forest.min_node_size,
        max_depth: None,
        seed: derive_seed(cfg.seed, &[FINAL, 1]),
    };
    train_forest(&matrix, &params)
}

/// Stack restricted to the variant's layers, in the variant's order.
pub fn variant_stack(prep: &Prepared, variant: &ModelVariant, year: i32) -> Result<FeatureStack> {
    let composites = prep
        .composites
        .get(&year)
        .ok_or_else(|| Error::Config(format!("year {year} was not prepared")))?;
    assemble_stack(composites, &prep.slope, prep.ntl.get(&year), variant, year)
}

/// Every season and slope, plus nighttime light for years that have it.
pub fn full_stacks(
    composites: &BTreeMap<i32, BTreeMap<Season, SeasonalComposite>>,
    slope: &Raster,
    ntl: &BTreeMap<i32, Raster>,
) -> Result<BTreeMap<i32, FeatureStack>> {
    composites
        .iter()
        .map(|(&y, c)| {
            let v = if ntl.contains_key(&y) { ModelVariant::multi_season_ntl() } else { ModelVariant::multi_season() };
            Ok((y, assemble_stack(c, slope, ntl.get(&y), &v, y)?))
        })
        .collect()
}

pub fn classify_years(model: &RandomForestModel, variant: &ModelVariant, prep: &Prepared) -> Result<BTreeMap<i32, Raster>> {
    prep.years
        .iter()
        .map(|&y| {
            let stack = variant_stack(prep, variant, y)?;
            Ok((y, classify_stack(model, &stack)?))
        })
        .collect()
}

pub fn assess_years(
    model: &RandomForestModel,
    validation: &FeaturedPool,
    years: &[i32],
    cfg: &AssessmentConfig,
    seed: u64,
) -> Result<Vec<(i32, AccuracyReport)>> {
    let mut out = Vec::new();
    for &y in years {
        let pool = validation.filter_years(|py| py == y);
        if pool.is_empty() {
            log::warn!("no validation points for {y}; skipped");
            continue;
        }
        let report = replicate_assessment(
            model,
            &pool,
            cfg.n_landslide,
            cfg.n_non,
            cfg.replications,
            derive_seed(seed, &[ASSESS, y as u64]),
        )
        .map_err(|e| {
            log::error!("assessment of {y} failed");
            e.in_stage("assess")
        })?;
        out.push((y, report));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Disk-backed run

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Composite,
    Slope,
    CalibrateNtl,
    Sample,
    SweepBeta,
    Train,
    Classify,
    Assess,
    Metrics,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Composite => "composite",
            Stage::Slope => "slope",
            Stage::CalibrateNtl => "calibrate-ntl",
            Stage::Sample => "sample",
            Stage::SweepBeta => "sweep-beta",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Assess => "assess",
            Stage::Metrics => "metrics",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub choices: BTreeMap<String, String>,
    pub results: BTreeMap<String, serde_json::Value>,
    pub files: Vec<String>,
}

struct Writer {
    out: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    fn raster(&mut self, rel: &str, r: &Raster) -> Result<()> {
        let stem = self.path(rel)?;
        write_raster(&stem, r)?;
        // The stem itself is not a file; record the header and payload.
        self.files.pop();
        self.files.push(format!("{rel}.hdr.json"));
        self.files.push(format!("{rel}.f32"));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        let p = self.path(rel)?;
        write_json(&p, v)
    }

    fn text(&mut self, rel: &str, s: &str) -> Result<()> {
        let p = self.path(rel)?;
        std::fs::write(&p, s).map_err(|e| Error::io(&p, e))
    }
}

fn load_observed(inputs: &InputPaths, years: Option<&[i32]>) -> Result<(Observed, Vec<i32>)> {
    let cat = SceneCatalog::load(&inputs.scenes)?;
    let mut all_years: Vec<i32> = cat
        .scenes
        .iter()
        .filter_map(|e| crate::features::season_of(e.date).map(|(_, y)| y))
        .collect();
    all_years.sort_unstable();
    all_years.dedup();
    let years = years.map(<[i32]>::to_vec).unwrap_or(all_years);
    let keep = |d: chrono::NaiveDate| crate::features::season_of(d).is_some_and(|(_, y)| years.contains(&y));
    let scenes = cat.read_scenes(&inputs.scenes, keep)?;
    let dem = read_raster(&inputs.dem)?;
    let (dmsp, viirs) = NtlCatalog::load(&inputs.ntl)?.read(&inputs.ntl)?;
    Ok((Observed { scenes, dem, dmsp, viirs }, years))
}

fn read_reference(dir: &Path, years: &[i32]) -> Result<BTreeMap<i32, Raster>> {
    years
        .iter()
        .map(|&y| {
            let stem = dir.join(format!("landcover_{y}"));
            if !header_path(&stem).exists() {
                return Err(Error::Config(format!("reference map not found: {}", header_path(&stem).display())));
            }
            Ok((y, read_raster(&stem)?))
        })
        .collect()
}

/// Runs every stage up to and including `last`, writing artifacts and a
/// manifest into `out`.
pub fn run_to(cfg: &RunConfig, out: &Path, last: Stage, command: &str) -> Result<Manifest> {
    cfg.validate()?;
    let variant = cfg.variant()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut w = Writer {
        out: out.to_path_buf(),
        files: Vec::new(),
    };
    let mut seeds = BTreeMap::new();
    seeds.insert("run".to_string(), cfg.seed);
    let mut choices = BTreeMap::new();
    choices.insert("t_test".to_string(), "welch_unpaired".to_string());
    choices.insert("training_year_split".to_string(), "equal_shares".to_string());
    choices.insert("ci".to_string(), "normal_1.96".to_string());
    choices.insert("composite_weighting".to_string(), "equal_per_observation".to_string());
    let mut results: BTreeMap<String, serde_json::Value> = BTreeMap::new();

    let inputs = match &cfg.inputs {
        Some(i) => i.clone(),
        None => {
            let wc = cfg.world.as_ref().expect("validated");
            seeds.insert("world".into(), wc.seed);
            let world = generate_world(wc).map_err(|e| e.in_stage("simulate"))?;
            let dir = out.join("world");
            let m = save_world(&world, &dir).map_err(|e| e.in_stage("simulate"))?;
            collect_files(&dir, "world", &mut w.files)?;
            InputPaths {
                scenes: dir.join(m.scenes),
                dem: dir.join(m.dem),
                ntl: dir.join(m.ntl),
                reference: dir.join("truth"),
            }
        }
    };
    let finish = |w: Writer, seeds, choices, results| -> Result<Manifest> {
        let mut files = w.files;
        files.sort();
        files.dedup();
        let manifest = Manifest {
            tool: "landslide",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: cfg.clone(),
            seeds,
            choices,
            results,
            files,
        };
        write_json(&out.join("manifest.json"), &manifest)?;
        Ok(manifest)
    };
    if last == Stage::Simulate {
        return finish(w, seeds, choices, results);
    }
    validate_inputs(&inputs)?;

    let (observed, years) = load_observed(&inputs, cfg.years.as_deref())?;
    if years.is_empty() {
        return Err(Error::Config("no years to process".into()));
    }
    let grid = observed.dem.header().clone();

    // composite
    let composites = composite_years(&observed.scenes, &grid, &years).map_err(|e| e.in_stage("composite"))?;
    for (y, per_season) in &composites {
        for (s, c) in per_season {
            for layer in CompositeLayer::ALL {
                w.raster(&format!("composites/{y}/{}_{}", s.name(), layer.name()), c.layer(layer))?;
            }
        }
    }
    if last == Stage::Composite {
        return finish(w, seeds, choices, results);
    }

    // slope
    let slope = compute_slope(&observed.dem);
    w.raster("slope", &slope)?;
    if last == Stage::Slope {
        return finish(w, seeds, choices, results);
    }

    // calibrate-ntl
    let (calibration, ntl) = harmonize_ntl(&observed.dmsp, &observed.viirs, cfg.ntl_overlap_year, &grid, &years)
        .map_err(|e| e.in_stage("calibrate-ntl"))?;
    if let Some(c) = &calibration {
        let p = w.path("ntl/calibration.json")?;
        c.save(&p)?;
        results.insert("calibration".into(), serde_json::to_value(c).expect("serializable"));
        if let Some(d) = observed.dmsp.get(&cfg.ntl_overlap_year) {
            results.insert("calibration_grid".into(), serde_json::to_value(d.header()).expect("serializable"));
        }
    }
    for (y, r) in &ntl {
        w.raster(&format!("ntl/ntl_{y}"), r)?;
    }
    if last == Stage::CalibrateNtl {
        return finish(w, seeds, choices, results);
    }

    let stacks = full_stacks(&composites, &slope, &ntl)?;
    let prep = Prepared {
        grid: grid.clone(),
        years: years.clone(),
        slope,
        calibration,
        ntl,
        composites,
        stacks,
    };

    // sample
    for y in &cfg.training_years {
        if !years.contains(y) {
            return Err(Error::Config(format!("training year {y} is not among processed years")));
        }
    }
    let assess_years_list: Vec<i32> = cfg.assessment_years.clone().unwrap_or_else(|| years.clone());
    let mut validation_years: Vec<i32> = assess_years_list.iter().chain(&cfg.training_years).copied().collect();
    validation_years.sort_unstable();
    validation_years.dedup();
    let reference = read_reference(&inputs.reference, &validation_years)?;
    let pools = draw_pools(
        &reference,
        &prep.stacks,
        &cfg.training_years,
        &validation_years,
        &cfg.sampling,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("sample"))?;
    let p = w.path("samples/training.csv")?;
    pools.train_points.write_csv(&p)?;
    let p = w.path("samples/validation.csv")?;
    pools.validation_points.write_csv(&p)?;
    let first = cfg.training_years[0];
    let ndvi = prep.composites[&first][&Season::Winter].layer(CompositeLayer::Ndvi);
    match morans_correlogram(ndvi, cfg.sampling.correlogram_max_lag, Contiguity::Rook) {
        Ok(corr) => {
            let mut text = String::from("lag,morans_i\n");
            for (lag, i) in &corr {
                text.push_str(&format!("{lag},{i}\n"));
            }
            w.text("samples/correlogram.csv", &text)?;
        }
        Err(e) => log::warn!("correlogram skipped: {e}"),
    }
    results.insert(
        "samples".into(),
        serde_json::json!({
            "training": pools.train_points.len(),
            "validation": pools.validation_points.len(),
            "training_rows": pools.train.len(),
            "validation_rows": pools.validation.len(),
            "min_distance": cfg.sampling.min_distance,
        }),
    );
    if last == Stage::Sample {
        return finish(w, seeds, choices, results);
    }

    // sweep-beta
    let beta = match cfg.beta {
        Some(b) => b,
        None if cfg.model.is_some() => 1.0,
        None => {
            let params = cfg.sweep_params()?;
            seeds.insert("sweep".into(), params.seed);
            let eval = pools.validation.filter_years(|y| cfg.training_years.contains(&y));
            let sweep = beta_sweep(&pools.train, &eval, &variant, &params).map_err(|e| e.in_stage("sweep-beta"))?;
            let b = find_optimal_beta(&sweep).map_err(|e| e.in_stage("sweep-beta"))?;
            write_sweep_outputs(&mut w, &sweep, b)?;
            b
        }
    };
    results.insert("beta".into(), serde_json::json!(beta));
    if last == Stage::SweepBeta {
        return finish(w, seeds, choices, results);
    }

    // train
    let model = match &cfg.model {
        Some(path) => RandomForestModel::load(path).map_err(|e| e.in_stage("train"))?,
        None => {
            seeds.insert("forest".into(), derive_seed(cfg.seed, &[FINAL, 1]));
            train_final(&pools, &variant, beta, cfg).map_err(|e| e.in_stage("train"))?
        }
    };
    let p = w.path("model/forest.bin")?;
    model.save(&p)?;
    results.insert(
        "model".into(),
        serde_json::json!({
            "oob_accuracy": model.oob_accuracy,
            "importance": model.feature_names.iter().cloned().zip(model.importance.iter().copied()).collect::<BTreeMap<_, _>>(),
        }),
    );
    if last == Stage::Train {
        return finish(w, seeds, choices, results);
    }

    // classify
    let maps = classify_years(&model, &variant, &prep).map_err(|e| e.in_stage("classify"))?;
    for (y, m) in &maps {
        w.raster(&format!("maps/landslide_{y}"), m)?;
    }
    if last == Stage::Classify {
        return finish(w, seeds, choices, results);
    }

    // assess
    let assess_seed = derive_seed(cfg.seed, &[ASSESS]);
    seeds.insert("assess".into(), assess_seed);
    let reports = assess_years(&model, &pools.validation, &assess_years_list, &cfg.assessment, assess_seed)?;
    if reports.is_empty() {
        log::warn!("assessment produced no results; accuracy report not written");
    } else {
        let p = w.path("reports/accuracy.csv")?;
        write_accuracy_csv(&p, &reports)?;
    }
    if last == Stage::Assess {
        return finish(w, seeds, choices, results);
    }

    // metrics
    let stack = AnnualMapStack::new(maps.keys().copied().collect(), maps.into_values().collect())?;
    let (metrics, area) = chronology_outputs(&stack)?;
    for (name, r) in metrics.named() {
        w.raster(&format!("metrics/{name}"), r)?;
    }
    if let Some(area) = area {
        let p = w.path("reports/area_composition.csv")?;
        write_area_csv(&p, &area)?;
        w.text("reports/area_composition.svg", &report::area_chart(&area))?;
    }
    finish(w, seeds, choices, results)
}

pub fn chronology_outputs(stack: &AnnualMapStack) -> Result<(MetricsRasters, Option<AreaComposition>)> {
    let metrics = stack_metrics(stack);
    let area = if stack.years().len() >= 2 { Some(area_composition(stack)?) } else { None };
    Ok((metrics, area))
}

fn write_sweep_outputs(w: &mut Writer, sweep: &BetaSweepResult, beta_n: f64) -> Result<()> {
    let p = w.path("reports/beta_sweep.csv")?;
    write_sweep_csv(&p, sweep)?;
    w.text("reports/beta_sweep.svg", &report::sweep_chart(sweep, beta_n))?;
    w.json("reports/beta_sweep.json", sweep)
}

fn collect_files(dir: &Path, rel: &str, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        let path = e.path();
        let child = format!("{rel}/{name}");
        if path.is_dir() {
            collect_files(&path, &child, out)?;
        } else {
            out.push(child);
        }
    }
    Ok(())
}
