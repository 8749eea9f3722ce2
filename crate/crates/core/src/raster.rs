//! Single-band grids, their on-disk format, nearest-neighbour resampling and
//! quality-mask application.
//!
//! Geometry is north-up: `origin_x`/`origin_y` is the upper-left corner of the
//! upper-left pixel, columns grow eastward and rows grow southward.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Payload sentinel for missing values.
pub const NODATA: f32 = f32::NAN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub crs_label: String,
}

impl GridHeader {
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
        crs_label: impl Into<String>,
    ) -> Result<Self> {
        let header = GridHeader {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
            crs_label: crs_label.into(),
        };
        header.validate().map_err(Error::Parameter)?;
        Ok(header)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            ));
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(format!("pixel size must be positive, got {}", self.pixel_size));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err("origin must be finite".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_aligned(&self, other: &GridHeader) -> bool {
        self == other
    }

    pub fn ensure_aligned(&self, other: &GridHeader) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::Alignment(format!(
                "{}x{}@{} ({}, {}) [{}] vs {}x{}@{} ({}, {}) [{}]",
                self.width,
                self.height,
                self.pixel_size,
                self.origin_x,
                self.origin_y,
                self.crs_label,
                other.width,
                other.height,
                other.pixel_size,
                other.origin_x,
                other.origin_y,
                other.crs_label
            )))
        }
    }

    /// Map coordinates of the center of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Pixel containing a map coordinate, using `floor((coord - origin) / size)`
    /// on each axis (y measured southward from the origin).
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let u = ((x - self.origin_x) / self.pixel_size).floor();
        let v = ((self.origin_y - y) / self.pixel_size).floor();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((v as usize, u as usize))
    }

    /// Extent as (min_x, min_y, max_x, max_y).
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    header: GridHeader,
    values: Vec<f32>,
}

impl Raster {
    /// Builds a raster; any non-finite value is stored as nodata.
    pub fn new(header: GridHeader, mut values: Vec<f32>) -> Result<Self> {
        if values.len() != header.len() {
            return Err(Error::Parameter(format!(
                "raster needs {} values, got {}",
                header.len(),
                values.len()
            )));
        }
        for v in values.iter_mut().filter(|v| !v.is_finite()) {
            *v = NODATA;
        }
        Ok(Raster { header, values })
    }

    pub fn filled(header: GridHeader, value: f32) -> Self {
        let value = if value.is_finite() { value } else { NODATA };
        let values = vec![value; header.len()];
        Raster { header, values }
    }

    pub fn from_fn(header: GridHeader, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(header.len());
        for row in 0..header.height {
            for col in 0..header.width {
                let v = f(row, col);
                values.push(if v.is_finite() { v } else { NODATA });
            }
        }
        Raster { header, values }
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn width(&self) -> usize {
        self.header.width
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        let v = self.values[row * self.header.width + col];
        (!v.is_nan()).then_some(v)
    }

    pub fn value_at(&self, x: f64, y: f64) -> Option<f32> {
        let (row, col) = self.header.locate(x, y)?;
        self.get(row, col)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    /// Pixelwise map over values; nodata inputs are passed as NaN.
    pub fn map(&self, f: impl Fn(f32) -> f32 + Sync) -> Raster {
        let values = self
            .values
            .par_iter()
            .map(|&v| {
                let out = f(v);
                if out.is_finite() {
                    out
                } else {
                    NODATA
                }
            })
            .collect();
        Raster {
            header: self.header.clone(),
            values,
        }
    }
}

/// Quality-band categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MaskCategory {
    Clear = 0,
    CloudMedium = 1,
    CloudHigh = 2,
    Gap = 3,
    OutsideScene = 255,
}

impl MaskCategory {
    pub const ALL: [MaskCategory; 5] = [
        MaskCategory::Clear,
        MaskCategory::CloudMedium,
        MaskCategory::CloudHigh,
        MaskCategory::Gap,
        MaskCategory::OutsideScene,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| *c as u8 == code)
    }
}

/// Small set of mask categories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CategorySet(u8);

impl CategorySet {
    pub const EMPTY: CategorySet = CategorySet(0);

    /// Medium/high-confidence cloud and scan-line gaps.
    pub const CLOUD_AND_GAP: CategorySet = CategorySet(0b0_1110);

    fn bit(c: MaskCategory) -> u8 {
        match c {
            MaskCategory::Clear => 1,
            MaskCategory::CloudMedium => 1 << 1,
            MaskCategory::CloudHigh => 1 << 2,
            MaskCategory::Gap => 1 << 3,
            MaskCategory::OutsideScene => 1 << 4,
        }
    }

    pub fn with(self, c: MaskCategory) -> Self {
        CategorySet(self.0 | Self::bit(c))
    }

    pub fn contains(self, c: MaskCategory) -> bool {
        self.0 & Self::bit(c) != 0
    }

    pub fn is_superset(self, other: CategorySet) -> bool {
        self.0 & other.0 == other.0
    }
}

impl FromIterator<MaskCategory> for CategorySet {
    fn from_iter<I: IntoIterator<Item = MaskCategory>>(iter: I) -> Self {
        iter.into_iter().fold(CategorySet::EMPTY, CategorySet::with)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskRaster {
    header: GridHeader,
    categories: Vec<MaskCategory>,
}

impl MaskRaster {
    pub fn new(header: GridHeader, categories: Vec<MaskCategory>) -> Result<Self> {
        if categories.len() != header.len() {
            return Err(Error::Parameter(format!(
                "mask needs {} values, got {}",
                header.len(),
                categories.len()
            )));
        }
        Ok(MaskRaster { header, categories })
    }

    pub fn from_codes(header: GridHeader, codes: &[u8]) -> Result<Self> {
        let categories = codes
            .iter()
            .map(|&c| {
                MaskCategory::from_code(c)
                    .ok_or_else(|| Error::Parameter(format!("unknown mask category {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(header, categories)
    }

    pub fn clear(header: GridHeader) -> Self {
        let categories = vec![MaskCategory::Clear; header.len()];
        MaskRaster { header, categories }
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn categories(&self) -> &[MaskCategory] {
        &self.categories
    }

    pub fn categories_mut(&mut self) -> &mut [MaskCategory] {
        &mut self.categories
    }

    pub fn count(&self, category: MaskCategory) -> usize {
        self.categories.iter().filter(|&&c| c == category).count()
    }
}

/// Nearest-neighbour resampling onto `target`, using pixel centers.
///
/// Ties (target centers exactly on a source pixel boundary) go to the smaller
/// row, then the smaller column. Target pixels whose center lies outside the
/// source extent are nodata.
pub fn resample_nearest(src: &Raster, target: &GridHeader) -> Result<Raster> {
    let sh = src.header();
    if sh.crs_label != target.crs_label {
        return Err(Error::Alignment(format!(
            "crs mismatch: `{}` vs `{}`",
            sh.crs_label, target.crs_label
        )));
    }
    if sh == target {
        return Ok(src.clone());
    }

    // Index of the nearest source cell along one axis, given the offset from
    // the source origin expressed in source pixels.
    let nearest = |offset: f64, n: usize| -> Option<usize> {
        if !(0.0..=n as f64).contains(&offset) {
            return None;
        }
        let idx = offset.ceil() as i64 - 1;
        Some(idx.clamp(0, n as i64 - 1) as usize)
    };

    let cols: Vec<Option<usize>> = (0..target.width)
        .map(|c| {
            let (x, _) = target.pixel_center(0, c);
            nearest((x - sh.origin_x) / sh.pixel_size, sh.width)
        })
        .collect();
    let rows: Vec<Option<usize>> = (0..target.height)
        .map(|r| {
            let (_, y) = target.pixel_center(r, 0);
            nearest((sh.origin_y - y) / sh.pixel_size, sh.height)
        })
        .collect();

    let mut values = vec![NODATA; target.len()];
    values
        .par_chunks_mut(target.width)
        .zip(rows.par_iter())
        .for_each(|(out_row, src_row)| {
            let Some(sr) = *src_row else { return };
            let base = sr * sh.width;
            for (out, src_col) in out_row.iter_mut().zip(&cols) {
                if let Some(sc) = *src_col {
                    *out = src.values[base + sc];
                }
            }
        });
    Ok(Raster {
        header: target.clone(),
        values,
    })
}

/// Sets pixels whose quality category is in `reject` to nodata.
pub fn apply_qa_mask(band: &Raster, qa: &MaskRaster, reject: CategorySet) -> Result<Raster> {
    band.header.ensure_aligned(&qa.header)?;
    let values = band
        .values
        .iter()
        .zip(&qa.categories)
        .map(|(&v, &c)| if reject.contains(c) { NODATA } else { v })
        .collect();
    Ok(Raster {
        header: band.header.clone(),
        values,
    })
}

// ---------------------------------------------------------------------------
// File format: `<stem>.hdr.json` sidecar plus `<stem>.f32` / `<stem>.u8`.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
}

impl DType {
    fn extension(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::U8 => "u8",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderFile {
    width: usize,
    height: usize,
    origin_x: f64,
    origin_y: f64,
    pixel_size: f64,
    crs_label: String,
    dtype: DType,
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut name = stem.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".hdr.json")
}

pub fn payload_path(stem: &Path, dtype: DType) -> PathBuf {
    with_suffix(stem, &format!(".{}", dtype.extension()))
}

fn write_header(stem: &Path, header: &GridHeader, dtype: DType) -> Result<PathBuf> {
    let path = header_path(stem);
    let file = HeaderFile {
        width: header.width,
        height: header.height,
        origin_x: header.origin_x,
        origin_y: header.origin_y,
        pixel_size: header.pixel_size,
        crs_label: header.crs_label.clone(),
        dtype,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("header serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read_header(stem: &Path, expected: DType) -> Result<GridHeader> {
    let path = header_path(stem);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: HeaderFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if file.dtype != expected {
        return Err(Error::Format {
            path,
            reason: format!("expected dtype {:?}, found {:?}", expected, file.dtype),
        });
    }
    let header = GridHeader {
        width: file.width,
        height: file.height,
        origin_x: file.origin_x,
        origin_y: file.origin_y,
        pixel_size: file.pixel_size,
        crs_label: file.crs_label,
    };
    header
        .validate()
        .map_err(|reason| Error::Format { path, reason })?;
    Ok(header)
}

fn read_payload(path: &Path, expected_len: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("payload is {} bytes, header implies {}", bytes.len(), expected_len),
        });
    }
    Ok(bytes)
}

/// Writes `<stem>.hdr.json` and `<stem>.f32`; returns the payload path.
pub fn write_raster(stem: &Path, raster: &Raster) -> Result<PathBuf> {
    write_header(stem, &raster.header, DType::F32)?;
    let path = payload_path(stem, DType::F32);
    let mut bytes = Vec::with_capacity(raster.values.len() * 4);
    for v in &raster.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_raster(stem: &Path) -> Result<Raster> {
    let header = read_header(stem, DType::F32)?;
    let path = payload_path(stem, DType::F32);
    let bytes = read_payload(&path, header.len() * 4)?;
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Raster::new(header, values)
}

/// Writes `<stem>.hdr.json` and `<stem>.u8`; returns the payload path.
pub fn write_mask(stem: &Path, mask: &MaskRaster) -> Result<PathBuf> {
    write_header(stem, &mask.header, DType::U8)?;
    let path = payload_path(stem, DType::U8);
    let bytes: Vec<u8> = mask.categories.iter().map(|&c| c as u8).collect();
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_mask(stem: &Path) -> Result<MaskRaster> {
    let header = read_header(stem, DType::U8)?;
    let path = payload_path(stem, DType::U8);
    let bytes = read_payload(&path, header.len())?;
    MaskRaster::from_codes(header, &bytes).map_err(|e| Error::Corrupt {
        path,
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, size: f64) -> GridHeader {
        GridHeader::new(w, h, 1000.0, 5000.0, size, "local").unwrap()
    }

    #[test]
    fn roundtrip_keeps_values_and_nodata() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("r");
        let r = Raster::new(grid(2, 2, 30.0), vec![1.0, 2.0, NODATA, 4.0]).unwrap();
        write_raster(&stem, &r).unwrap();
        let back = read_raster(&stem).unwrap();
        assert_eq!(back.header(), r.header());
        assert_eq!(back.get(1, 0), None);
        let bits = |r: &Raster| r.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&r));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("r");
        let r = Raster::new(grid(2, 2, 30.0), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let payload = write_raster(&stem, &r).unwrap();
        let bytes = fs::read(&payload).unwrap();
        fs::write(&payload, &bytes[..12]).unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn zero_width_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("r");
        fs::write(
            header_path(&stem),
            r#"{"width":0,"height":2,"origin_x":0,"origin_y":0,"pixel_size":30,"crs_label":"x","dtype":"f32"}"#,
        )
        .unwrap();
        fs::write(payload_path(&stem, DType::F32), []).unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::Format { .. })));
    }

    #[test]
    fn garbage_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("r");
        fs::write(header_path(&stem), "not json").unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_roundtrip_and_bad_category() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("qa");
        let m = MaskRaster::from_codes(grid(2, 2, 30.0), &[0, 1, 3, 255]).unwrap();
        let payload = write_mask(&stem, &m).unwrap();
        assert_eq!(read_mask(&stem).unwrap(), m);
        fs::write(&payload, [0u8, 1, 7, 0]).unwrap();
        assert!(matches!(read_mask(&stem), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn coarse_pixel_replicates_over_fine_grid() {
        let src = Raster::new(GridHeader::new(1, 1, 0.0, 900.0, 900.0, "c").unwrap(), vec![7.0]).unwrap();
        let target = GridHeader::new(30, 30, 0.0, 900.0, 30.0, "c").unwrap();
        let out = resample_nearest(&src, &target).unwrap();
        assert_eq!(out.values().len(), 900);
        assert!(out.values().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn resample_identity() {
        let r = Raster::new(grid(3, 2, 30.0), vec![1.0, 2.0, 3.0, NODATA, 5.0, 6.0]).unwrap();
        let out = resample_nearest(&r, r.header()).unwrap();
        assert_eq!(
            out.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            r.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn quadrant_replication_2x2_to_4x4() {
        let src = Raster::new(
            GridHeader::new(2, 2, 0.0, 120.0, 60.0, "c").unwrap(),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let target = GridHeader::new(4, 4, 0.0, 120.0, 30.0, "c").unwrap();
        let out = resample_nearest(&src, &target).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(out.values(), &expected);
    }

    #[test]
    fn boundary_ties_and_outside_extent() {
        // Target centers at x = 60 fall exactly between source columns 0 and 1.
        let src = Raster::new(
            GridHeader::new(2, 2, 0.0, 120.0, 60.0, "c").unwrap(),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let target = GridHeader::new(3, 3, 30.0, 150.0, 30.0, "c").unwrap();
        let out = resample_nearest(&src, &target).unwrap();
        // Row 0 center y = 135 is above the source extent.
        assert!(out.values()[..3].iter().all(|v| v.is_nan()));
        // Row 1 center y = 105 -> source row 0; col 1 center x = 75 -> source col 1;
        // col 0 center x = 45 -> source col 0.
        assert_eq!(out.get(1, 0), Some(1.0));
        assert_eq!(out.get(1, 1), Some(2.0));
        // Row 2 center y = 75 -> source row 0; row 3 would be the tie at y = 60.
        assert_eq!(out.get(2, 2), Some(2.0));

        let tie = GridHeader::new(1, 1, 30.0, 90.0, 60.0, "c").unwrap();
        // Center (60, 60) sits on the corner of all four source pixels.
        assert_eq!(resample_nearest(&src, &tie).unwrap().get(0, 0), Some(1.0));
    }

    #[test]
    fn crs_mismatch_is_alignment_error() {
        let src = Raster::filled(grid(2, 2, 30.0), 1.0);
        let target = GridHeader::new(2, 2, 1000.0, 5000.0, 30.0, "other").unwrap();
        assert!(matches!(resample_nearest(&src, &target), Err(Error::Alignment(_))));
    }

    #[test]
    fn qa_mask_examples() {
        let h = grid(4, 1, 30.0);
        let band = Raster::new(h.clone(), vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let qa = MaskRaster::from_codes(h.clone(), &[0, 2, 0, 3]).unwrap();
        let out = apply_qa_mask(&band, &qa, CategorySet::CLOUD_AND_GAP).unwrap();
        assert_eq!(
            out.values().iter().map(|v| (!v.is_nan()).then_some(*v)).collect::<Vec<_>>(),
            vec![Some(5.0), None, Some(7.0), None]
        );
        assert_eq!(apply_qa_mask(&band, &qa, CategorySet::EMPTY).unwrap(), band);

        let h2 = grid(2, 1, 30.0);
        let band = Raster::new(h2.clone(), vec![NODATA, 1.0]).unwrap();
        let qa = MaskRaster::from_codes(h2, &[0, 0]).unwrap();
        let reject: CategorySet = [MaskCategory::CloudHigh].into_iter().collect();
        let out = apply_qa_mask(&band, &qa, reject).unwrap();
        assert_eq!(out.get(0, 0), None);
        assert_eq!(out.get(0, 1), Some(1.0));

        let other = MaskRaster::clear(grid(1, 2, 30.0));
        assert!(matches!(
            apply_qa_mask(&band, &other, reject),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn locate_uses_floor_on_boundaries() {
        let h = grid(4, 4, 30.0);
        assert_eq!(h.locate(1030.0, 5000.0), Some((0, 1)));
        assert_eq!(h.locate(1029.999, 4970.0), Some((1, 0)));
        assert_eq!(h.locate(1120.0, 5000.0), None);
        assert_eq!(h.locate(999.0, 4990.0), None);
    }

    fn raster_strategy() -> impl Strategy<Value = Raster> {
        (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop_oneof![4 => -1e6f32..1e6, 1 => Just(f32::NAN)], w * h)
                .prop_map(move |v| Raster::new(grid(w, h, 30.0), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn prop_io_roundtrip(r in raster_strategy()) {
            let dir = tempfile::tempdir().unwrap();
            let stem = dir.path().join("p");
            write_raster(&stem, &r).unwrap();
            let back = read_raster(&stem).unwrap();
            prop_assert_eq!(back.header(), r.header());
            let bits = |r: &Raster| r.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&r));
        }

        #[test]
        fn prop_resample_never_invents(r in raster_strategy(), w in 1usize..9, h in 1usize..9, size in 5.0f64..80.0) {
            let target = GridHeader::new(w, h, 1000.0 + 7.0, 5000.0 - 3.0, size, "local").unwrap();
            let out = resample_nearest(&r, &target).unwrap();
            for v in out.values().iter().filter(|v| !v.is_nan()) {
                prop_assert!(r.values().iter().any(|s| s.to_bits() == v.to_bits()));
            }
            let again = resample_nearest(&out, &target).unwrap();
            prop_assert_eq!(
                again.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                out.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn prop_qa_mask_monotone(codes in prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, 3, 255]), 9),
                                 a in prop::collection::vec(prop::sample::select(MaskCategory::ALL.to_vec()), 0..5),
                                 b in prop::collection::vec(prop::sample::select(MaskCategory::ALL.to_vec()), 0..5)) {
            let h = grid(3, 3, 30.0);
            let band = Raster::new(h.clone(), (0..9).map(|i| i as f32).collect()).unwrap();
            let qa = MaskRaster::from_codes(h, &codes).unwrap();
            let small: CategorySet = a.iter().copied().collect();
            let large: CategorySet = a.iter().chain(&b).copied().collect();
            prop_assert!(large.is_superset(small));
            let s = apply_qa_mask(&band, &qa, small).unwrap();
            let l = apply_qa_mask(&band, &qa, large).unwrap();
            for (x, y) in s.values().iter().zip(l.values()) {
                if x.is_nan() { prop_assert!(y.is_nan()); }
            }
        }
    }
}
