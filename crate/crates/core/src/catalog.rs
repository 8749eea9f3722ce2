//! JSON catalogs listing scene and nighttime-light rasters on disk. Paths in a
//! catalog are relative to the catalog file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Band, DatedScene};
use crate::raster::{header_path, read_mask, read_raster, write_mask, write_raster, Raster};

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("catalog serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn base_dir(catalog: &Path) -> PathBuf {
    catalog.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub date: NaiveDate,
    pub bands: BTreeMap<Band, String>,
    pub qa: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneCatalog {
    pub scenes: Vec<SceneEntry>,
}

impl SceneCatalog {
    /// Writes each scene under `<catalog dir>/<subdir>/<date>/` and the
    /// catalog itself to `catalog`.
    pub fn write(catalog: &Path, subdir: &str, scenes: &[DatedScene]) -> Result<SceneCatalog> {
        let base = base_dir(catalog);
        let mut entries = Vec::with_capacity(scenes.len());
        for s in scenes {
            let rel = format!("{subdir}/{}", s.acquisition_date);
            let dir = base.join(&rel);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut bands = BTreeMap::new();
            for b in Band::ALL {
                write_raster(&dir.join(b.name()), s.band(b))?;
                bands.insert(b, format!("{rel}/{}", b.name()));
            }
            write_mask(&dir.join("qa"), &s.qa)?;
            entries.push(SceneEntry {
                date: s.acquisition_date,
                bands,
                qa: format!("{rel}/qa"),
            });
        }
        let cat = SceneCatalog { scenes: entries };
        write_json(catalog, &cat)?;
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<SceneCatalog> {
        read_json(path)
    }

    /// Every referenced file, for up-front validation.
    pub fn referenced_headers(&self, catalog: &Path) -> Vec<PathBuf> {
        let base = base_dir(catalog);
        self.scenes
            .iter()
            .flat_map(|e| e.bands.values().chain(std::iter::once(&e.qa)))
            .map(|rel| header_path(&base.join(rel)))
            .collect()
    }

    pub fn read_scenes(&self, catalog: &Path, keep: impl Fn(NaiveDate) -> bool) -> Result<Vec<DatedScene>> {
        let base = base_dir(catalog);
        self.scenes
            .iter()
            .filter(|e| keep(e.date))
            .map(|e| {
                let mut bands = BTreeMap::new();
                for b in Band::ALL {
                    let rel = e
                        .bands
                        .get(&b)
                        .ok_or_else(|| Error::Input(format!("scene {} lacks band {}", e.date, b.name())))?;
                    bands.insert(b, read_raster(&base.join(rel))?);
                }
                DatedScene::new(e.date, bands, read_mask(&base.join(&e.qa))?)
            })
            .collect()
    }
}

/// Annual nighttime-light rasters per sensor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NtlCatalog {
    pub dmsp: BTreeMap<i32, String>,
    pub viirs: BTreeMap<i32, String>,
}

impl NtlCatalog {
    pub fn write(
        catalog: &Path,
        subdir: &str,
        dmsp: &BTreeMap<i32, Raster>,
        viirs: &BTreeMap<i32, Raster>,
    ) -> Result<NtlCatalog> {
        let base = base_dir(catalog);
        let dir = base.join(subdir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut cat = NtlCatalog::default();
        for (sensor, rasters, out) in [("dmsp", dmsp, &mut cat.dmsp), ("viirs", viirs, &mut cat.viirs)] {
            for (year, r) in rasters {
                let rel = format!("{subdir}/{sensor}_{year}");
                write_raster(&base.join(&rel), r)?;
                out.insert(*year, rel);
            }
        }
        write_json(catalog, &cat)?;
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<NtlCatalog> {
        read_json(path)
    }

    pub fn referenced_headers(&self, catalog: &Path) -> Vec<PathBuf> {
        let base = base_dir(catalog);
        self.dmsp
            .values()
            .chain(self.viirs.values())
            .map(|rel| header_path(&base.join(rel)))
            .collect()
    }

    pub fn read(&self, catalog: &Path) -> Result<(BTreeMap<i32, Raster>, BTreeMap<i32, Raster>)> {
        let base = base_dir(catalog);
        let load = |m: &BTreeMap<i32, String>| {
            m.iter()
                .map(|(y, rel)| Ok((*y, read_raster(&base.join(rel))?)))
                .collect::<Result<BTreeMap<_, _>>>()
        };
        Ok((load(&self.dmsp)?, load(&self.viirs)?))
    }
}
