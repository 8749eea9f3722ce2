//! Accuracy bookkeeping, validation draws, replicated assessment, class-ratio
//! sweeps and Welch t-test model comparison.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::features::ModelVariant;
use crate::forest::{train_forest, ForestParams, RandomForestModel};
use crate::rng::{derive_seed, task_rng};
use crate::sampling::{beta_allocate_by_year, csv_err, FeaturedPool, Label, SamplePoint};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(pred: &[Label], reference: &[Label]) -> Result<ConfusionCounts> {
    if pred.len() != reference.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} reference labels",
            pred.len(),
            reference.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &r) in pred.iter().zip(reference) {
        match (p.is_landslide(), r.is_landslide()) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Overall, user's and producer's accuracy; `None` where the ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub oa: f64,
    pub ua: Option<f64>,
    pub pa: Option<f64>,
}

pub fn accuracy_report(c: &ConfusionCounts) -> Result<Accuracy> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Input("no evaluated points".into()));
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Accuracy {
        oa: (c.tp + c.tn) as f64 / total as f64,
        ua: ratio(c.tp, c.tp + c.fp),
        pa: ratio(c.tp, c.tp + c.fn_),
    })
}

/// Mean with a normal-approximation 95% half-width over `n` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub ci: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<MetricSummary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Some(MetricSummary { mean, ci, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub oa: MetricSummary,
    pub ua: Option<MetricSummary>,
    pub pa: Option<MetricSummary>,
    pub replications: usize,
    pub per_replication: Vec<Accuracy>,
}

impl AccuracyReport {
    pub fn from_replications(per_replication: Vec<Accuracy>) -> Result<Self> {
        let oa: Vec<f64> = per_replication.iter().map(|a| a.oa).collect();
        let ua: Vec<f64> = per_replication.iter().filter_map(|a| a.ua).collect();
        let pa: Vec<f64> = per_replication.iter().filter_map(|a| a.pa).collect();
        Ok(AccuracyReport {
            oa: MetricSummary::of(&oa).ok_or_else(|| Error::Input("no replications".into()))?,
            ua: MetricSummary::of(&ua),
            pa: MetricSummary::of(&pa),
            replications: per_replication.len(),
            per_replication,
        })
    }
}

/// Indices of `n_landslide` landslide and `n_non` non-landslide points drawn
/// without replacement; landslide indices come first.
pub fn allocate_validation_indices<R: Rng + ?Sized>(
    points: &[SamplePoint],
    n_landslide: usize,
    n_non: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let (mut land, mut non): (Vec<usize>, Vec<usize>) = (0..points.len()).partition(|&i| points[i].label.is_landslide());
    if land.len() < n_landslide {
        return Err(Error::Allocation(format!(
            "need {n_landslide} landslide validation points, pool has {}",
            land.len()
        )));
    }
    if non.len() < n_non {
        return Err(Error::Allocation(format!(
            "need {n_non} non-landslide validation points, pool has {}",
            non.len()
        )));
    }
    let mut out = Vec::with_capacity(n_landslide + n_non);
    out.extend_from_slice(land.partial_shuffle(rng, n_landslide).0);
    out.extend_from_slice(non.partial_shuffle(rng, n_non).0);
    Ok(out)
}

pub fn allocate_validation<R: Rng + ?Sized>(
    pool: &crate::sampling::SampleSet,
    n_landslide: usize,
    n_non: usize,
    rng: &mut R,
) -> Result<crate::sampling::SampleSet> {
    let idx = allocate_validation_indices(&pool.points, n_landslide, n_non, rng)?;
    Ok(pool.subset(&idx))
}

/// Replicated validation of fixed per-point predictions. Replication `r`
/// draws from `task_rng(seed, [r])`.
pub fn replicate_from_predictions(
    points: &[SamplePoint],
    predicted: &[Label],
    n_landslide: usize,
    n_non: usize,
    reps: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    if reps < 2 {
        return Err(Error::Input(format!("need at least 2 replications, got {reps}")));
    }
    if points.len() != predicted.len() {
        return Err(Error::Input("one prediction per point required".into()));
    }
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = task_rng(seed, &[r as u64]);
            let idx = allocate_validation_indices(points, n_landslide, n_non, &mut rng)?;
            let pred: Vec<Label> = idx.iter().map(|&i| predicted[i]).collect();
            let refs: Vec<Label> = idx.iter().map(|&i| points[i].label).collect();
            accuracy_report(&confusion(&pred, &refs)?)
        })
        .collect::<Result<Vec<_>>>()?;
    AccuracyReport::from_replications(per_rep)
}

pub fn replicate_assessment(
    model: &RandomForestModel,
    pool: &FeaturedPool,
    n_landslide: usize,
    n_non: usize,
    reps: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    let matrix = pool.matrix.select_features(&model.feature_names)?;
    let predicted = model.predict_matrix(&matrix)?;
    replicate_from_predictions(&pool.points, &predicted, n_landslide, n_non, reps, seed)
}

// ---------------------------------------------------------------------------
// Class-ratio sweep

/// `start, start + step, ..., end` with values rounded to 1e-10 so that
/// decimal steps land on their nominal values.
pub fn beta_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err(Error::Parameter(format!("invalid beta grid {start}..{end} step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
        .collect();
    validate_grid(&grid)?;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Parameter("beta grid is empty".into()));
    }
    if grid.iter().any(|&b| !(b >= 1.0) || !b.is_finite()) {
        return Err(Error::Parameter("beta values must be finite and >= 1".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("beta grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub grid: Vec<f64>,
    pub folds: usize,
    pub total_train: usize,
    pub min_per_subclass: usize,
    pub eval_landslide: usize,
    pub eval_non: usize,
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            grid: beta_grid(1.0, 5.0, 0.1).expect("default grid"),
            folds: 50,
            total_train: 2000,
            min_per_subclass: 100,
            eval_landslide: 500,
            eval_non: 5500,
            n_trees: 500,
            mtry: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub beta: f64,
    pub oa: Option<MetricSummary>,
    pub ua: Option<MetricSummary>,
    pub pa: Option<MetricSummary>,
    pub folds: Vec<Accuracy>,
}

impl BetaPoint {
    pub fn ua_folds(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|a| a.ua).collect()
    }
    pub fn pa_folds(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|a| a.pa).collect()
    }
    pub fn oa_folds(&self) -> Vec<f64> {
        self.folds.iter().map(|a| a.oa).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepResult {
    pub variant: String,
    pub points: Vec<BetaPoint>,
    pub folds: usize,
}

impl BetaSweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.beta).collect()
    }
}

/// Trains and evaluates one forest per (beta, fold).
///
/// Training draws take equal shares from each year in `train`. Within a fold,
/// every beta shares the evaluation subsample and the forest seed; training
/// draws are keyed by (beta index, fold).
pub fn beta_sweep(
    train: &FeaturedPool,
    eval: &FeaturedPool,
    variant: &ModelVariant,
    params: &SweepParams,
) -> Result<BetaSweepResult> {
    validate_grid(&params.grid)?;
    if params.folds == 0 {
        return Err(Error::Parameter("folds must be at least 1".into()));
    }
    let names = variant.layer_names();
    let train_m = train.matrix.select_features(&names)?;
    let eval_m = eval.matrix.select_features(&names)?;
    let tasks: Vec<(usize, usize)> = (0..params.grid.len())
        .flat_map(|b| (0..params.folds).map(move |f| (b, f)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(b, f)| {
            let beta = params.grid[b];
            let mut train_rng = task_rng(params.seed, &[b as u64, f as u64, 0]);
            let idx = beta_allocate_by_year(&train.points, beta, params.total_train, params.min_per_subclass, &mut train_rng)?;
            let forest = ForestParams {
                n_trees: params.n_trees,
                mtry: params.mtry,
                seed: derive_seed(params.seed, &[f as u64, 1]),
                ..ForestParams::default()
            };
            let model = train_forest(&train_m.subset(&idx), &forest)?;
            let mut eval_rng = task_rng(params.seed, &[f as u64, 2]);
            let eidx = allocate_validation_indices(&eval.points, params.eval_landslide, params.eval_non, &mut eval_rng)?;
            let pred = model.predict_matrix(&eval_m.subset(&eidx))?;
            let refs: Vec<Label> = eidx.iter().map(|&i| eval.points[i].label).collect();
            accuracy_report(&confusion(&pred, &refs)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let points = params
        .grid
        .iter()
        .enumerate()
        .map(|(b, &beta)| {
            let folds = results[b * params.folds..(b + 1) * params.folds].to_vec();
            let oa: Vec<f64> = folds.iter().map(|a| a.oa).collect();
            let ua: Vec<f64> = folds.iter().filter_map(|a| a.ua).collect();
            let pa: Vec<f64> = folds.iter().filter_map(|a| a.pa).collect();
            BetaPoint {
                beta,
                oa: MetricSummary::of(&oa),
                ua: MetricSummary::of(&ua),
                pa: MetricSummary::of(&pa),
                folds,
            }
        })
        .collect();
    Ok(BetaSweepResult {
        variant: variant.label(),
        points,
        folds: params.folds,
    })
}

/// Grid beta minimizing |UA - PA|; ties go to the smaller beta.
pub fn find_optimal_beta(sweep: &BetaSweepResult) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for p in &sweep.points {
        let (Some(ua), Some(pa)) = (p.ua, p.pa) else {
            continue;
        };
        let gap = (ua.mean - pa.mean).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, p.beta));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::Input("sweep has no beta with both UA and PA defined".into()))
}

/// Sign changes of UA - PA along the grid, ignoring exact ties.
pub fn crossing_count(sweep: &BetaSweepResult) -> usize {
    let signs: Vec<f64> = sweep
        .points
        .iter()
        .filter_map(|p| Some((p.ua?.mean - p.pa?.mean).signum()))
        .filter(|s| *s != 0.0)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

// ---------------------------------------------------------------------------
// Model comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// mean(b) > mean(a)
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub alternative: Alternative,
    pub significant: bool,
}

/// Unpaired Welch t-test of `b` against `a`.
pub fn compare_models(a: &[f64], b: &[f64], alpha: f64, alternative: Alternative) -> Result<ModelComparison> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input("each sample needs at least 2 values".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = mb - ma;
    let (t, df, p) = if se2 == 0.0 {
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        let p = match alternative {
            _ if diff == 0.0 => 1.0,
            Alternative::Greater => {
                if diff > 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            Alternative::TwoSided => 0.0,
        };
        (t, na + nb - 2.0, p)
    } else {
        let t = diff / se2.sqrt();
        let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Diagnostic(format!("t distribution: {e}")))?;
        let p = match alternative {
            Alternative::Greater => dist.sf(t),
            Alternative::TwoSided => (2.0 * dist.sf(t.abs())).min(1.0),
        };
        (t, df, p)
    };
    Ok(ModelComparison {
        t_statistic: t,
        df,
        p_value: p,
        alpha,
        alternative,
        significant: p < alpha,
    })
}

// ---------------------------------------------------------------------------
// CSV output

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_sweep_csv(path: &Path, sweep: &BetaSweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["beta", "ua_mean", "ua_ci", "pa_mean", "pa_ci"])
        .map_err(|e| csv_err(path, e))?;
    for p in &sweep.points {
        w.write_record([
            format!("{}", p.beta),
            fmt_opt(p.ua.map(|m| m.mean)),
            fmt_opt(p.ua.map(|m| m.ci)),
            fmt_opt(p.pa.map(|m| m.mean)),
            fmt_opt(p.pa.map(|m| m.ci)),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_accuracy_csv(path: &Path, rows: &[(i32, AccuracyReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["year", "oa_mean", "oa_ci", "ua_mean", "ua_ci", "pa_mean", "pa_ci", "replications"])
        .map_err(|e| csv_err(path, e))?;
    for (year, r) in rows {
        w.write_record([
            year.to_string(),
            format!("{}", r.oa.mean),
            format!("{}", r.oa.ci),
            fmt_opt(r.ua.map(|m| m.mean)),
            fmt_opt(r.ua.map(|m| m.ci)),
            fmt_opt(r.pa.map(|m| m.mean)),
            fmt_opt(r.pa.map(|m| m.ci)),
            r.replications.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{Subclass, TrainingMatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const L: Label = Label::Landslide;
    const N: Label = Label::NonLandslide;

    #[test]
    fn confusion_examples() {
        let c = confusion(&[L, L, N, N], &[L, N, N, L]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 1, fn_: 1 });
        let x = [L, N, N, L, N];
        let c = confusion(&x, &x).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(confusion(&[], &[]).unwrap(), ConfusionCounts::default());
        assert!(matches!(confusion(&[L], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn accuracy_examples() {
        let a = accuracy_report(&ConfusionCounts { tp: 80, fp: 20, fn_: 20, tn: 5880 }).unwrap();
        assert_eq!(a.ua, Some(0.8));
        assert_eq!(a.pa, Some(0.8));
        assert_eq!(a.oa, 5960.0 / 6000.0);
        assert!((a.oa - 0.99333).abs() < 1e-5);

        let a = accuracy_report(&ConfusionCounts { tp: 0, fp: 0, fn_: 3, tn: 5 }).unwrap();
        assert_eq!(a.ua, None);
        let x = [L, N, L];
        let a = accuracy_report(&confusion(&x, &x).unwrap()).unwrap();
        assert_eq!((a.oa, a.ua, a.pa), (1.0, Some(1.0), Some(1.0)));
        assert!(accuracy_report(&ConfusionCounts::default()).is_err());
    }

    fn pool(n_land: usize, n_non: usize) -> Vec<SamplePoint> {
        let mut v = Vec::new();
        for i in 0..n_land {
            v.push(SamplePoint::new(i as f64 * 100.0, 0.0, 2005, Subclass::Landslide));
        }
        for i in 0..n_non {
            v.push(SamplePoint::new(i as f64 * 100.0, 100.0, 2005, Subclass::NON_LANDSLIDE[i % 6]));
        }
        v
    }

    #[test]
    fn validation_allocation_examples() {
        let pts = pool(800, 7000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = allocate_validation_indices(&pts, 500, 5500, &mut rng).unwrap();
        assert_eq!(idx.len(), 6000);
        assert_eq!(idx.iter().filter(|&&i| pts[i].label.is_landslide()).count(), 500);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 6000);

        assert!(matches!(
            allocate_validation_indices(&pool(400, 7000), 500, 5500, &mut rng),
            Err(Error::Allocation(_))
        ));
        let idx = allocate_validation_indices(&pts, 0, 100, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| !pts[i].label.is_landslide()));
    }

    #[test]
    fn perfect_predictions_have_zero_ci() {
        let pts = pool(600, 6000);
        let pred: Vec<Label> = pts.iter().map(|p| p.label).collect();
        let r = replicate_from_predictions(&pts, &pred, 500, 5500, 30, 4).unwrap();
        assert_eq!(r.oa.mean, 1.0);
        assert_eq!(r.oa.ci, 0.0);
        assert_eq!(r.replications, 30);
        assert!(matches!(replicate_from_predictions(&pts, &pred, 500, 5500, 1, 4), Err(Error::Input(_))));
    }

    #[test]
    fn coin_flip_user_accuracy_matches_prevalence() {
        let pts = pool(1000, 11000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred: Vec<Label> = pts.iter().map(|_| if rng.random_bool(0.5) { L } else { N }).collect();
        let r = replicate_from_predictions(&pts, &pred, 500, 5500, 100, 6).unwrap();
        let ua = r.ua.unwrap();
        // Positives among the sample are Bin(500, 1/2) true and Bin(5500, 1/2) false.
        let expected = 500.0 / 6000.0;
        assert!((ua.mean - expected).abs() < 0.01, "{ua:?}");
        assert!(ua.ci > 0.0);
        let pa = r.pa.unwrap();
        assert!((pa.mean - 0.5).abs() < 0.03);
    }

    #[test]
    fn replication_reproducible_and_seed_stable() {
        let pts = pool(1000, 11000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pred: Vec<Label> = pts
            .iter()
            .map(|p| if rng.random_bool(if p.label.is_landslide() { 0.8 } else { 0.05 }) { L } else { N })
            .collect();
        let base = replicate_from_predictions(&pts, &pred, 500, 5500, 100, 0).unwrap();
        assert_eq!(base, replicate_from_predictions(&pts, &pred, 500, 5500, 100, 0).unwrap());
        for seed in 1..20 {
            let r = replicate_from_predictions(&pts, &pred, 500, 5500, 100, seed).unwrap();
            for (x, y) in [(r.oa, base.oa), (r.ua.unwrap(), base.ua.unwrap()), (r.pa.unwrap(), base.pa.unwrap())] {
                let band = 3.0 * (x.ci.powi(2) + y.ci.powi(2)).sqrt();
                assert!((x.mean - y.mean).abs() < band, "seed {seed}: {x:?} vs {y:?}");
            }
        }
    }

    #[test]
    fn grid_has_41_values() {
        let g = beta_grid(1.0, 5.0, 0.1).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[17], 2.7);
        assert_eq!(g[40], 5.0);
        assert!(beta_grid(0.5, 2.0, 0.1).is_err());
    }

    fn sweep_of(ua: &[f64], pa: &[f64], betas: &[f64]) -> BetaSweepResult {
        let points = betas
            .iter()
            .zip(ua.iter().zip(pa))
            .map(|(&beta, (&u, &p))| BetaPoint {
                beta,
                oa: None,
                ua: Some(MetricSummary { mean: u, ci: 0.0, n: 1 }),
                pa: Some(MetricSummary { mean: p, ci: 0.0, n: 1 }),
                folds: vec![],
            })
            .collect();
        BetaSweepResult { variant: "t".into(), points, folds: 1 }
    }

    #[test]
    fn optimal_beta_examples() {
        let s = sweep_of(&[0.6, 0.7, 0.8], &[0.8, 0.7, 0.6], &[1.0, 2.0, 3.0]);
        assert_eq!(find_optimal_beta(&s).unwrap(), 2.0);
        assert_eq!(crossing_count(&s), 1);
        let s = sweep_of(&[0.9, 0.95, 0.99], &[0.8, 0.7, 0.6], &[1.0, 2.0, 3.0]);
        assert_eq!(find_optimal_beta(&s).unwrap(), 1.0);
        assert_eq!(crossing_count(&s), 0);
        // Equal gaps break toward the smaller beta.
        let s = sweep_of(&[0.6, 0.8], &[0.7, 0.7], &[1.0, 1.5]);
        assert_eq!(find_optimal_beta(&s).unwrap(), 1.0);
    }

    /// Overlapping Gaussian classes: landslide shifted in two of three
    /// features, 10% prevalence in both pools.
    fn gaussian_pools(seed: u64) -> (FeaturedPool, FeaturedPool) {
        let variant = ModelVariant::winter_only();
        let names = variant.layer_names();
        let make = |n: usize, seed: u64, y0: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let mut points = Vec::new();
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let sub = if i % 10 == 0 { Subclass::Landslide } else { Subclass::NON_LANDSLIDE[i % 6] };
                let shift = if sub == Subclass::Landslide { 1.2 } else { 0.0 };
                let row: Vec<f64> = (0..names.len())
                    .map(|k| noise.sample(&mut rng) + if k < 2 { shift } else { 0.0 })
                    .collect();
                points.push(SamplePoint::new(i as f64, y0, 2005, sub));
                labels.push(sub.label());
                rows.push(row);
            }
            FeaturedPool {
                points,
                matrix: TrainingMatrix::new(rows, labels, names.clone()).unwrap(),
            }
        };
        (make(6000, seed, 0.0), make(6000, seed + 1, 1.0))
    }

    fn small_sweep_params() -> SweepParams {
        SweepParams {
            grid: vec![1.0, 4.0],
            folds: 4,
            total_train: 400,
            min_per_subclass: 10,
            eval_landslide: 200,
            eval_non: 2000,
            n_trees: 25,
            mtry: None,
            seed: 11,
        }
    }

    #[test]
    fn equal_allocation_over_predicts() {
        let (train, eval) = gaussian_pools(20);
        let s = beta_sweep(&train, &eval, &ModelVariant::winter_only(), &small_sweep_params()).unwrap();
        let ua = |i: usize| s.points[i].ua.unwrap().mean;
        let pa = |i: usize| s.points[i].pa.unwrap().mean;
        assert!(ua(0) < ua(1), "ua {} vs {}", ua(0), ua(1));
        assert!(pa(0) > ua(0));
        assert!(s.points.iter().all(|p| p.folds.len() == 4));
        let b = find_optimal_beta(&s).unwrap();
        assert!(s.grid().contains(&b));
    }

    #[test]
    fn sweep_parallel_equals_sequential() {
        let (train, eval) = gaussian_pools(21);
        let params = SweepParams { folds: 2, n_trees: 10, ..small_sweep_params() };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| beta_sweep(&train, &eval, &ModelVariant::winter_only(), &params).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    // Independent tail probability: Simpson's rule on the t density, with
    // log-gamma from the Lanczos (g=7) series.
    fn ln_gamma(x: f64) -> f64 {
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    fn t_tail_oracle(t: f64, df: f64) -> f64 {
        let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        let f = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let (a, b) = (t, t + 200.0);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn draws(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn welch_examples() {
        let a = draws(0.7, 0.02, 20, 1);
        let c = compare_models(&a, &a, 0.001, Alternative::Greater).unwrap();
        assert_eq!(c.t_statistic, 0.0);
        assert!((c.p_value - 0.5).abs() < 1e-12);
        assert!(!c.significant);

        let a = draws(0.722, 0.01, 50, 2);
        let b = draws(0.785, 0.01, 50, 3);
        let c = compare_models(&a, &b, 0.001, Alternative::Greater).unwrap();
        assert!(c.significant && c.p_value < 0.001);
        let oracle = t_tail_oracle(c.t_statistic, c.df);
        assert!(oracle < 0.001);
        assert!((c.p_value - oracle).abs() <= 1e-6 * oracle.max(1e-300) + 1e-300, "{} vs {oracle}", c.p_value);

        let c = compare_models(&b, &a, 0.001, Alternative::Greater).unwrap();
        assert!(!c.significant && c.p_value > 0.5);

        let flat = vec![0.5; 5];
        let c = compare_models(&flat, &flat, 0.001, Alternative::Greater).unwrap();
        assert_eq!(c.p_value, 1.0);
    }

    #[test]
    fn welch_matches_oracle_at_moderate_effect() {
        let a = draws(0.70, 0.03, 12, 4);
        let b = draws(0.72, 0.05, 9, 5);
        let c = compare_models(&a, &b, 0.05, Alternative::Greater).unwrap();
        let oracle = t_tail_oracle(c.t_statistic, c.df);
        assert!((c.p_value - oracle).abs() < 1e-8, "{} vs {oracle}", c.p_value);
        let two = compare_models(&a, &b, 0.05, Alternative::TwoSided).unwrap();
        assert!((two.p_value - 2.0 * oracle.min(1.0 - oracle)).abs() < 1e-8);
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let s = sweep_of(&[0.6, 0.7], &[0.8, 0.7], &[1.0, 1.1]);
        let p = dir.path().join("s.csv");
        write_sweep_csv(&p, &s).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "beta,ua_mean,ua_ci,pa_mean,pa_ci");
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn prop_t_antisymmetric(a in prop::collection::vec(0.0f64..1.0, 2..20), b in prop::collection::vec(0.0f64..1.0, 2..20)) {
            let ab = compare_models(&a, &b, 0.001, Alternative::Greater).unwrap();
            let ba = compare_models(&b, &a, 0.001, Alternative::Greater).unwrap();
            if ab.t_statistic.is_finite() {
                prop_assert!((ab.t_statistic + ba.t_statistic).abs() <= 1e-12 * ab.t_statistic.abs().max(1.0));
            }
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
            prop_assert_eq!(ab.significant, ab.p_value < 0.001);
        }

        #[test]
        fn prop_self_confusion_is_perfect(x in prop::collection::vec(any::<bool>(), 2..50)) {
            let mut labels: Vec<Label> = x.iter().map(|&b| if b { L } else { N }).collect();
            labels[0] = L;
            labels[1] = N;
            let a = accuracy_report(&confusion(&labels, &labels).unwrap()).unwrap();
            prop_assert_eq!((a.oa, a.ua, a.pa), (1.0, Some(1.0), Some(1.0)));
        }
    }
}
