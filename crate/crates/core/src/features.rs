//! Seasonal composites, spectral indices, terrain slope and the ordered
//! feature stacks fed to the classifier.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{apply_qa_mask, CategorySet, GridHeader, MaskRaster, Raster, NODATA};

/// Denominator magnitude below which a normalized difference is undefined.
pub const INDEX_EPSILON: f64 = 1e-9;

/// Accepted scaled surface-reflectance range, including a sensor noise margin.
pub const REFLECTANCE_RANGE: (f32, f32) = (-0.2, 1.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Blue,
    Green,
    Red,
    Nir,
    Swir1,
    Swir2,
}

impl Band {
    pub const ALL: [Band; 6] = [
        Band::Blue,
        Band::Green,
        Band::Red,
        Band::Nir,
        Band::Swir1,
        Band::Swir2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Band::Blue => "blue",
            Band::Green => "green",
            Band::Red => "red",
            Band::Nir => "nir",
            Band::Swir1 => "swir1",
            Band::Swir2 => "swir2",
        }
    }
}

/// One of the eight per-season composite layers: six bands then NDVI, NDWI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CompositeLayer {
    Band(Band),
    Ndvi,
    Ndwi,
}

impl CompositeLayer {
    pub const ALL: [CompositeLayer; 8] = [
        CompositeLayer::Band(Band::Blue),
        CompositeLayer::Band(Band::Green),
        CompositeLayer::Band(Band::Red),
        CompositeLayer::Band(Band::Nir),
        CompositeLayer::Band(Band::Swir1),
        CompositeLayer::Band(Band::Swir2),
        CompositeLayer::Ndvi,
        CompositeLayer::Ndwi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompositeLayer::Band(b) => b.name(),
            CompositeLayer::Ndvi => "ndvi",
            CompositeLayer::Ndwi => "ndwi",
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
}

impl Season {
    pub const ALL: [Season; 3] = [Season::Winter, Season::Spring, Season::Summer];

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
        }
    }

    pub fn definition(self) -> SeasonDefinition {
        SeasonDefinition::of(self)
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Calendar months belonging to a season. Winter of year Y spans December of
/// Y-1 through February of Y; September to November belong to no season.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeasonDefinition {
    pub season: Season,
    /// (year offset relative to the composite year, month)
    pub months: Vec<(i32, u32)>,
}

impl SeasonDefinition {
    pub fn of(season: Season) -> Self {
        let months = match season {
            Season::Winter => vec![(-1, 12), (0, 1), (0, 2)],
            Season::Spring => vec![(0, 3), (0, 4), (0, 5)],
            Season::Summer => vec![(0, 6), (0, 7), (0, 8)],
        };
        SeasonDefinition { season, months }
    }

    pub fn contains(&self, date: NaiveDate, year: i32) -> bool {
        self.months
            .iter()
            .any(|&(offset, month)| date.year() == year + offset && date.month() == month)
    }
}

/// Season and composite year a date contributes to, if any.
pub fn season_of(date: NaiveDate) -> Option<(Season, i32)> {
    match date.month() {
        12 => Some((Season::Winter, date.year() + 1)),
        1 | 2 => Some((Season::Winter, date.year())),
        3..=5 => Some((Season::Spring, date.year())),
        6..=8 => Some((Season::Summer, date.year())),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct DatedScene {
    pub acquisition_date: NaiveDate,
    bands: BTreeMap<Band, Raster>,
    pub qa: MaskRaster,
}

impl DatedScene {
    pub fn new(acquisition_date: NaiveDate, bands: BTreeMap<Band, Raster>, qa: MaskRaster) -> Result<Self> {
        for band in Band::ALL {
            let raster = bands
                .get(&band)
                .ok_or_else(|| Error::Input(format!("scene {acquisition_date} lacks band {}", band.name())))?;
            raster.header().ensure_aligned(qa.header())?;
            let (lo, hi) = REFLECTANCE_RANGE;
            if let Some(v) = raster.values().iter().find(|v| !v.is_nan() && !(lo..=hi).contains(*v)) {
                return Err(Error::Input(format!(
                    "scene {acquisition_date} band {} has reflectance {v} outside [{lo}, {hi}]",
                    band.name()
                )));
            }
        }
        Ok(DatedScene {
            acquisition_date,
            bands,
            qa,
        })
    }

    pub fn band(&self, band: Band) -> &Raster {
        &self.bands[&band]
    }

    pub fn header(&self) -> &GridHeader {
        self.qa.header()
    }

    pub fn qa_mut(&mut self) -> &mut MaskRaster {
        &mut self.qa
    }

    pub fn into_parts(self) -> (NaiveDate, BTreeMap<Band, Raster>, MaskRaster) {
        (self.acquisition_date, self.bands, self.qa)
    }
}

/// Pixelwise (a - b) / (a + b).
pub fn normalized_difference(a: &Raster, b: &Raster) -> Result<Raster> {
    a.header().ensure_aligned(b.header())?;
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| nd_value(x, y))
        .collect();
    Raster::new(a.header().clone(), values)
}

fn nd_value(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        return NODATA;
    }
    let (a, b) = (a as f64, b as f64);
    let den = a + b;
    if den.abs() < INDEX_EPSILON {
        NODATA
    } else {
        ((a - b) / den) as f32
    }
}

/// Per-season mean of the six bands and two indices.
#[derive(Debug, Clone)]
pub struct SeasonalComposite {
    pub season: Season,
    pub year: i32,
    /// Number of scenes that fell in the season.
    pub scene_count: usize,
    layers: Vec<Raster>,
}

impl SeasonalComposite {
    pub fn layer(&self, layer: CompositeLayer) -> &Raster {
        &self.layers[layer.index()]
    }

    pub fn layers(&self) -> impl Iterator<Item = (CompositeLayer, &Raster)> {
        CompositeLayer::ALL.into_iter().zip(&self.layers)
    }

    pub fn header(&self) -> &GridHeader {
        self.layers[0].header()
    }

    pub fn from_layers(season: Season, year: i32, layers: Vec<Raster>) -> Result<Self> {
        if layers.len() != CompositeLayer::ALL.len() {
            return Err(Error::Input(format!("composite needs 8 layers, got {}", layers.len())));
        }
        for l in &layers[1..] {
            l.header().ensure_aligned(layers[0].header())?;
        }
        Ok(SeasonalComposite {
            season,
            year,
            scene_count: 0,
            layers,
        })
    }
}

/// Seasonal mean composite on `grid`.
///
/// Scenes outside (season, year) are ignored. Cloud and gap pixels are
/// rejected before averaging, indices are formed per scene and then averaged,
/// and pixels with no clear observation are nodata.
pub fn seasonal_composite(
    scenes: &[DatedScene],
    season: &SeasonDefinition,
    year: i32,
    grid: &GridHeader,
) -> Result<SeasonalComposite> {
    let mut selected: Vec<&DatedScene> = scenes
        .iter()
        .filter(|s| season.contains(s.acquisition_date, year))
        .collect();
    for s in &selected {
        grid.ensure_aligned(s.header())?;
    }
    selected.sort_by_key(|s| s.acquisition_date);

    // Clear-sky bands per scene, in date order.
    let masked: Vec<Vec<Raster>> = selected
        .iter()
        .map(|s| {
            Band::ALL
                .iter()
                .map(|&b| apply_qa_mask(s.band(b), &s.qa, CategorySet::CLOUD_AND_GAP))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let band_pos = |b: Band| Band::ALL.iter().position(|x| *x == b).unwrap();

    let layers = CompositeLayer::ALL
        .par_iter()
        .map(|&layer| {
            let mut sum = vec![0.0f64; grid.len()];
            let mut count = vec![0u32; grid.len()];
            let mut accumulate = |values: &[f32]| {
                for ((s, c), &v) in sum.iter_mut().zip(count.iter_mut()).zip(values) {
                    if !v.is_nan() {
                        *s += v as f64;
                        *c += 1;
                    }
                }
            };
            for bands in &masked {
                match layer {
                    CompositeLayer::Band(b) => accumulate(bands[band_pos(b)].values()),
                    CompositeLayer::Ndvi => accumulate(
                        normalized_difference(&bands[band_pos(Band::Nir)], &bands[band_pos(Band::Red)])?.values(),
                    ),
                    CompositeLayer::Ndwi => accumulate(
                        normalized_difference(&bands[band_pos(Band::Green)], &bands[band_pos(Band::Swir1)])?
                            .values(),
                    ),
                }
            }
            let values = sum
                .iter()
                .zip(&count)
                .map(|(&s, &c)| if c == 0 { NODATA } else { (s / c as f64) as f32 })
                .collect();
            Raster::new(grid.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SeasonalComposite {
        season: season.season,
        year,
        scene_count: selected.len(),
        layers,
    })
}

/// Slope in degrees from Horn's 3x3 gradient, edge-replicated at the border.
/// Any nodata in the window yields nodata.
pub fn compute_slope(dem: &Raster) -> Raster {
    let h = dem.header();
    let (w, ht) = (h.width, h.height);
    let size = h.pixel_size;
    let vals = dem.values();
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, ht as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        vals[r * w + c] as f64
    };
    let mut out = vec![NODATA; h.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(row, out_row)| {
        let r = row as isize;
        for (col, o) in out_row.iter_mut().enumerate() {
            let c = col as isize;
            let z1 = at(r - 1, c - 1);
            let z2 = at(r - 1, c);
            let z3 = at(r - 1, c + 1);
            let z4 = at(r, c - 1);
            let z5 = at(r, c);
            let z6 = at(r, c + 1);
            let z7 = at(r + 1, c - 1);
            let z8 = at(r + 1, c);
            let z9 = at(r + 1, c + 1);
            if [z1, z2, z3, z4, z5, z6, z7, z8, z9].iter().any(|z| z.is_nan()) {
                continue;
            }
            let gx = ((z3 + 2.0 * z6 + z9) - (z1 + 2.0 * z4 + z7)) / (8.0 * size);
            let gy = ((z7 + 2.0 * z8 + z9) - (z1 + 2.0 * z2 + z3)) / (8.0 * size);
            *o = (gx * gx + gy * gy).sqrt().atan().to_degrees() as f32;
        }
    });
    Raster::new(h.clone(), out).expect("same grid")
}

/// Seasons and nighttime-light switch defining one model's input space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelVariant {
    seasons: Vec<Season>,
    pub use_ntl: bool,
}

impl ModelVariant {
    pub fn new(seasons: impl IntoIterator<Item = Season>, use_ntl: bool) -> Result<Self> {
        let mut seasons: Vec<Season> = seasons.into_iter().collect();
        seasons.sort();
        seasons.dedup();
        if seasons.is_empty() {
            return Err(Error::Config("model variant needs at least one season".into()));
        }
        Ok(ModelVariant { seasons, use_ntl })
    }

    pub fn winter_only() -> Self {
        Self::single(Season::Winter)
    }

    pub fn spring_only() -> Self {
        Self::single(Season::Spring)
    }

    pub fn summer_only() -> Self {
        Self::single(Season::Summer)
    }

    pub fn single(season: Season) -> Self {
        ModelVariant {
            seasons: vec![season],
            use_ntl: false,
        }
    }

    pub fn multi_season() -> Self {
        ModelVariant {
            seasons: Season::ALL.to_vec(),
            use_ntl: false,
        }
    }

    pub fn multi_season_ntl() -> Self {
        ModelVariant {
            seasons: Season::ALL.to_vec(),
            use_ntl: true,
        }
    }

    /// Parses `winter`, `spring`, `summer`, `multi`, `multi+ntl`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "winter" => Ok(Self::winter_only()),
            "spring" => Ok(Self::spring_only()),
            "summer" => Ok(Self::summer_only()),
            "multi" => Ok(Self::multi_season()),
            "multi+ntl" => Ok(Self::multi_season_ntl()),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }

    pub fn seasons(&self) -> &[Season] {
        &self.seasons
    }

    pub fn label(&self) -> String {
        let base = if self.seasons.len() == Season::ALL.len() {
            "multi".to_string()
        } else {
            self.seasons.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
        };
        if self.use_ntl {
            format!("{base}+ntl")
        } else {
            base
        }
    }

    pub fn layer_count(&self) -> usize {
        CompositeLayer::ALL.len() * self.seasons.len() + 1 + usize::from(self.use_ntl)
    }

    /// Layer names in stack order: season-major composites, slope, then ntl.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.layer_count());
        for season in &self.seasons {
            for layer in CompositeLayer::ALL {
                names.push(format!("{}_{}", season.name(), layer.name()));
            }
        }
        names.push("slope".into());
        if self.use_ntl {
            names.push("ntl".into());
        }
        names
    }
}

#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub variant: ModelVariant,
    pub year: i32,
    layers: Vec<(String, Raster)>,
}

impl FeatureStack {
    pub fn layers(&self) -> &[(String, Raster)] {
        &self.layers
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn header(&self) -> &GridHeader {
        self.layers[0].1.header()
    }

    /// Feature vector at a pixel; `None` if any layer is nodata there.
    pub fn pixel_row(&self, index: usize) -> Option<Vec<f64>> {
        let mut row = Vec::with_capacity(self.layers.len());
        for (_, r) in &self.layers {
            let v = r.values()[index];
            if v.is_nan() {
                return None;
            }
            row.push(v as f64);
        }
        Some(row)
    }
}

pub fn assemble_stack(
    composites: &BTreeMap<Season, SeasonalComposite>,
    slope: &Raster,
    ntl: Option<&Raster>,
    variant: &ModelVariant,
    year: i32,
) -> Result<FeatureStack> {
    let grid = slope.header();
    let mut layers = Vec::with_capacity(variant.layer_count());
    for season in variant.seasons() {
        let composite = composites
            .get(season)
            .ok_or_else(|| Error::Config(format!("variant {} needs a {season} composite for {year}", variant.label())))?;
        for (layer, raster) in composite.layers() {
            grid.ensure_aligned(raster.header())?;
            layers.push((format!("{}_{}", season.name(), layer.name()), raster.clone()));
        }
    }
    layers.push(("slope".to_string(), slope.clone()));
    if variant.use_ntl {
        let ntl = ntl.ok_or_else(|| {
            Error::Config(format!("variant {} needs nighttime light for {year}", variant.label()))
        })?;
        grid.ensure_aligned(ntl.header())?;
        layers.push(("ntl".to_string(), ntl.clone()));
    }
    debug_assert_eq!(layers.len(), variant.layer_count());
    Ok(FeatureStack {
        variant: variant.clone(),
        year,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::MaskCategory;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize) -> GridHeader {
        GridHeader::new(w, h, 0.0, h as f64 * 30.0, 30.0, "local").unwrap()
    }

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn scene(d: NaiveDate, h: &GridHeader, value: impl Fn(Band) -> f32, qa: &[u8]) -> DatedScene {
        let bands = Band::ALL
            .iter()
            .map(|&b| (b, Raster::filled(h.clone(), value(b))))
            .collect();
        DatedScene::new(d, bands, MaskRaster::from_codes(h.clone(), qa).unwrap()).unwrap()
    }

    #[test]
    fn nd_examples() {
        let h = grid(3, 1);
        let a = Raster::new(h.clone(), vec![0.5, 0.3, 0.0]).unwrap();
        let b = Raster::new(h.clone(), vec![0.1, 0.3, 0.0]).unwrap();
        let nd = normalized_difference(&a, &b).unwrap();
        assert!((nd.get(0, 0).unwrap() - 0.666_667).abs() < 1e-6);
        assert_eq!(nd.get(0, 1), Some(0.0));
        assert_eq!(nd.get(0, 2), None);
        let c = Raster::filled(grid(1, 3), 1.0);
        assert!(matches!(normalized_difference(&a, &c), Err(Error::Alignment(_))));
    }

    #[test]
    fn composite_mean_of_clear_observations() {
        let h = grid(1, 1);
        let red = |v: f32| move |b: Band| if b == Band::Red { v } else { 0.3 };
        let scenes = vec![
            scene(date(2005, 6, 10), &h, red(0.2), &[2]),
            scene(date(2005, 7, 10), &h, red(0.4), &[0]),
            scene(date(2005, 8, 10), &h, red(0.6), &[0]),
        ];
        let c = seasonal_composite(&scenes, &Season::Summer.definition(), 2005, &h).unwrap();
        assert!((c.layer(CompositeLayer::Band(Band::Red)).get(0, 0).unwrap() - 0.5).abs() < 1e-7);
        assert_eq!(c.scene_count, 3);
    }

    #[test]
    fn composite_all_rejected_is_nodata() {
        let h = grid(2, 1);
        let scenes = vec![
            scene(date(2005, 3, 10), &h, |_| 0.3, &[1, 0]),
            scene(date(2005, 4, 10), &h, |_| 0.3, &[3, 0]),
        ];
        let c = seasonal_composite(&scenes, &Season::Spring.definition(), 2005, &h).unwrap();
        for (_, r) in c.layers() {
            assert_eq!(r.get(0, 0), None);
        }
        assert!(c.layer(CompositeLayer::Ndvi).get(0, 1).is_some());
    }

    #[test]
    fn winter_spans_previous_december() {
        let h = grid(1, 1);
        let blue = |v: f32| move |b: Band| if b == Band::Blue { v } else { 0.3 };
        let scenes = vec![
            scene(date(2004, 12, 15), &h, blue(0.1), &[0]),
            scene(date(2005, 12, 15), &h, blue(0.9), &[0]),
            scene(date(2005, 1, 15), &h, blue(0.3), &[0]),
        ];
        let def = Season::Winter.definition();
        assert!(def.contains(date(2004, 12, 15), 2005));
        assert!(!def.contains(date(2005, 12, 15), 2005));
        let c = seasonal_composite(&scenes, &def, 2005, &h).unwrap();
        assert_eq!(c.scene_count, 2);
        assert!((c.layer(CompositeLayer::Band(Band::Blue)).get(0, 0).unwrap() - 0.2).abs() < 1e-7);
    }

    #[test]
    fn autumn_belongs_to_no_season() {
        for m in 9..=11 {
            assert_eq!(season_of(date(2005, m, 1)), None);
        }
        assert_eq!(season_of(date(2004, 12, 1)), Some((Season::Winter, 2005)));
        assert_eq!(season_of(date(2005, 5, 31)), Some((Season::Spring, 2005)));
    }

    #[test]
    fn empty_scene_list_gives_nodata() {
        let h = grid(2, 2);
        let c = seasonal_composite(&[], &Season::Spring.definition(), 2005, &h).unwrap();
        assert!(c.layers().all(|(_, r)| r.valid_count() == 0));
    }

    #[test]
    fn misaligned_scene_is_rejected() {
        let s = scene(date(2005, 3, 1), &grid(2, 1), |_| 0.2, &[0, 0]);
        assert!(matches!(
            seasonal_composite(&[s], &Season::Spring.definition(), 2005, &grid(1, 2)),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn indices_are_averaged_per_date() {
        // NDVI of the mean bands would be (0.45-0.15)/(0.6) = 0.5; the mean of
        // per-date NDVI is ((0.8-0.2)/1.0 + (0.1-0.1)/0.2) / 2 = 0.3.
        let h = grid(1, 1);
        let s1 = scene(date(2005, 6, 1), &h, |b| match b { Band::Nir => 0.8, Band::Red => 0.2, _ => 0.3 }, &[0]);
        let s2 = scene(date(2005, 7, 1), &h, |b| match b { Band::Nir => 0.1, Band::Red => 0.1, _ => 0.3 }, &[0]);
        let c = seasonal_composite(&[s1, s2], &Season::Summer.definition(), 2005, &h).unwrap();
        assert!((c.layer(CompositeLayer::Ndvi).get(0, 0).unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_reflectance_rejected() {
        let h = grid(1, 1);
        let bands = Band::ALL.iter().map(|&b| (b, Raster::filled(h.clone(), 2.0))).collect();
        assert!(DatedScene::new(date(2005, 1, 1), bands, MaskRaster::clear(h)).is_err());
    }

    fn plane(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> Raster {
        let g = grid(w, h);
        Raster::from_fn(g, |r, c| f(c as f64, r as f64) as f32)
    }

    #[test]
    fn slope_flat_and_planes() {
        let flat = compute_slope(&Raster::filled(grid(5, 5), 120.0));
        assert!(flat.values().iter().all(|&v| v == 0.0));

        // 30 m rise per 30 m pixel.
        let s = compute_slope(&plane(6, 6, |x, _| 30.0 * x));
        for r in 1..5 {
            for c in 1..5 {
                assert!((s.get(r, c).unwrap() as f64 - 45.0).abs() < 1e-6);
            }
        }

        let g = 1.0 / 3f64.sqrt();
        let s = compute_slope(&plane(6, 6, |x, y| 30.0 * g * (0.6 * x + 0.8 * y) + 500.0));
        for r in 1..5 {
            for c in 1..5 {
                assert!((s.get(r, c).unwrap() as f64 - 30.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn slope_nodata_window() {
        let mut v = vec![10.0f32; 25];
        v[12] = NODATA;
        let s = compute_slope(&Raster::new(grid(5, 5), v).unwrap());
        assert_eq!(s.get(1, 1), None);
        assert_eq!(s.get(3, 3), None);
        assert!(s.get(0, 0).is_some());
        assert_eq!(s.valid_count(), 25 - 9);
    }

    fn composite_map(h: &GridHeader, seasons: &[Season]) -> BTreeMap<Season, SeasonalComposite> {
        seasons
            .iter()
            .map(|&s| {
                let layers = (0..8).map(|i| Raster::filled(h.clone(), i as f32)).collect();
                (s, SeasonalComposite::from_layers(s, 2005, layers).unwrap())
            })
            .collect()
    }

    #[test]
    fn stack_layer_counts_and_order() {
        let h = grid(2, 2);
        let comps = composite_map(&h, &Season::ALL);
        let slope = Raster::filled(h.clone(), 10.0);
        let ntl = Raster::filled(h.clone(), 3.0);

        let full = assemble_stack(&comps, &slope, Some(&ntl), &ModelVariant::multi_season_ntl(), 2005).unwrap();
        assert_eq!(full.layers().len(), 26);
        assert_eq!(full.layer_names(), ModelVariant::multi_season_ntl().layer_names());
        assert_eq!(full.layer_names()[0], "winter_blue");
        assert_eq!(full.layer_names()[8], "spring_blue");
        assert_eq!(full.layer_names()[23], "summer_ndwi");
        assert_eq!(full.layer_names()[24], "slope");
        assert_eq!(full.layer_names()[25], "ntl");

        let winter = assemble_stack(&comps, &slope, None, &ModelVariant::winter_only(), 2005).unwrap();
        assert_eq!(winter.layers().len(), 9);

        assert!(matches!(
            assemble_stack(&comps, &slope, None, &ModelVariant::multi_season_ntl(), 2005),
            Err(Error::Config(_))
        ));
        let only_winter = composite_map(&h, &[Season::Winter]);
        assert!(matches!(
            assemble_stack(&only_winter, &slope, None, &ModelVariant::multi_season(), 2005),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn variant_labels_parse_back() {
        for v in [
            ModelVariant::winter_only(),
            ModelVariant::spring_only(),
            ModelVariant::summer_only(),
            ModelVariant::multi_season(),
            ModelVariant::multi_season_ntl(),
        ] {
            assert_eq!(ModelVariant::parse(&v.label()).unwrap(), v);
        }
        assert!(ModelVariant::new([], false).is_err());
    }

    proptest! {
        #[test]
        fn prop_nd_bounded(a in 0.0f32..1.6, b in 0.0f32..1.6) {
            let h = grid(1, 1);
            let r = normalized_difference(&Raster::filled(h.clone(), a), &Raster::filled(h, b)).unwrap();
            if let Some(v) = r.get(0, 0) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn prop_composite_permutation_and_cloud_invariant(
            vals in prop::collection::vec((0.0f32..1.0, 0.0f32..1.0, prop::sample::select(vec![0u8, 0, 1, 2, 3])), 1..6),
            seed in any::<u64>(),
        ) {
            let h = grid(1, 1);
            let mut scenes: Vec<DatedScene> = vals.iter().enumerate().map(|(i, &(r, n, q))| {
                scene(date(2005, 6 + (i as u32 % 3), 1 + i as u32), &h,
                      move |b| match b { Band::Red => r, Band::Nir => n, _ => 0.2 }, &[q])
            }).collect();
            let def = Season::Summer.definition();
            let base = seasonal_composite(&scenes, &def, 2005, &h).unwrap();
            let k = (seed as usize) % scenes.len();
            scenes.rotate_left(k);
            scenes.reverse();
            scenes.push(scene(date(2005, 7, 28), &h, |_| 0.9, &[2]));
            let other = seasonal_composite(&scenes, &def, 2005, &h).unwrap();
            for ((_, a), (_, b)) in base.layers().zip(other.layers()) {
                prop_assert_eq!(a.values()[0].to_bits(), b.values()[0].to_bits());
            }
        }

        #[test]
        fn prop_slope_offset_and_negation(vals in prop::collection::vec(-500.0f32..500.0, 16), offset in -1000.0f32..1000.0) {
            let dem = Raster::new(grid(4, 4), vals.clone()).unwrap();
            let s = compute_slope(&dem);
            let shifted = compute_slope(&dem.map(|v| v + offset));
            let negated = compute_slope(&dem.map(|v| -v));
            for i in 0..16 {
                prop_assert!((s.values()[i] - negated.values()[i]).abs() < 1e-9);
                prop_assert!((s.values()[i] - shifted.values()[i]).abs() < 1e-2);
                prop_assert!((0.0..90.0).contains(&s.values()[i]));
            }
        }
    }

    #[test]
    fn mask_category_codes() {
        assert_eq!(MaskCategory::from_code(255), Some(MaskCategory::OutsideScene));
        assert_eq!(MaskCategory::from_code(4), None);
    }
}
