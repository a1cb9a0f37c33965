//! ESRI land cover remapping and Built-Area fusion with GHS-SMOD.
//!
//! Target ids after preprocessing:
//!
//! | ESRI class (code)        | target |
//! |--------------------------|--------|
//! | Water (1)                | 0      |
//! | Trees (2)                | 1      |
//! | Flooded Vegetation (4)   | 2      |
//! | Crops (5)                | 3      |
//! | Bare Ground (8)          | 4      |
//! | Rangeland (11)           | 5      |
//! | Built Area (7) + SMOD rural | 6   |
//! | Built Area (7) + SMOD urban | 7   |
//! | Snow/Ice (9), Clouds (10), missing | -1 |

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resample_labels_to_grid, LabelRaster, IGNORE};

pub const NUM_TARGET_CLASSES: u8 = 8;
pub const CLASS_NAMES: [&str; 8] = [
    "water",
    "trees",
    "flooded_vegetation",
    "crops",
    "bare",
    "rangeland",
    "rural",
    "urban",
];
/// Placeholder id carried by Built-Area pixels between remap and fusion.
pub const BUILT_AREA_INTERIM: i16 = 8;
pub const ESRI_BUILT_AREA: i16 = 7;
pub const ESRI_NODATA: i16 = 0;

pub const SMOD_WATER: i16 = 10;
pub const SMOD_RURAL_CLUSTER: i16 = 13;
pub const SMOD_URBAN_CENTRE: i16 = 30;

const RURAL: i16 = 6;
const URBAN: i16 = 7;

/// Raw ESRI code → target id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMap {
    pub raw_to_target: BTreeMap<i16, i16>,
    pub built_area_raw_code: i16,
    /// Raster fill value for missing observations; maps to ignore.
    pub nodata_code: i16,
}

impl Default for ClassMap {
    fn default() -> Self {
        let raw_to_target = [
            (1, 0),
            (2, 1),
            (4, 2),
            (5, 3),
            (8, 4),
            (11, 5),
            (9, IGNORE),
            (10, IGNORE),
        ]
        .into_iter()
        .collect();
        Self {
            raw_to_target,
            built_area_raw_code: ESRI_BUILT_AREA,
            nodata_code: ESRI_NODATA,
        }
    }
}

impl ClassMap {
    pub fn validate(&self) -> Result<()> {
        if self.raw_to_target.contains_key(&self.built_area_raw_code) {
            return Err(Error::Config(
                "built-area code must not also have a direct mapping".into(),
            ));
        }
        if let Some((raw, t)) = self
            .raw_to_target
            .iter()
            .find(|(_, &t)| !(IGNORE..i16::from(NUM_TARGET_CLASSES)).contains(&t))
        {
            return Err(Error::Config(format!("code {raw} maps to invalid target {t}")));
        }
        Ok(())
    }

    fn target_of(&self, raw: i16) -> Option<i16> {
        if raw == self.built_area_raw_code {
            Some(BUILT_AREA_INTERIM)
        } else if raw == self.nodata_code || raw == IGNORE {
            Some(IGNORE)
        } else {
            self.raw_to_target.get(&raw).copied()
        }
    }
}

/// Map raw ESRI codes to target ids. Built-Area pixels get
/// [`BUILT_AREA_INTERIM`] and must go through [`fuse_builtarea`] next.
pub fn remap_esri(raw: &LabelRaster, cm: &ClassMap) -> Result<LabelRaster> {
    cm.validate()?;
    let values = raw
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            cm.target_of(v).ok_or_else(|| {
                Error::Data(format!(
                    "unknown ESRI code {v} at pixel {i} (row {}, col {})",
                    i / raw.width() as usize,
                    i % raw.width() as usize
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabelRaster::new(
        raw.width(),
        raw.height(),
        values,
        *raw.transform(),
        BUILT_AREA_INTERIM as u8 + 1,
    )
}

/// Inverse of the default [`ClassMap`] for fused targets: rural and urban both
/// become Built Area, ignore becomes the ESRI nodata code.
pub fn esri_codes_from_targets(targets: &LabelRaster) -> Result<LabelRaster> {
    const CODES: [i16; 8] = [1, 2, 4, 5, 8, 11, ESRI_BUILT_AREA, ESRI_BUILT_AREA];
    let values = targets
        .values()
        .iter()
        .map(|&t| match t {
            IGNORE => Ok(ESRI_NODATA),
            0..=7 => Ok(CODES[t as usize]),
            other => Err(Error::Data(format!("target id {other} has no ESRI code"))),
        })
        .collect::<Result<Vec<_>>>()?;
    LabelRaster::new(targets.width(), targets.height(), values, *targets.transform(), 12)
}

/// How SMOD degree-of-urbanisation codes split Built Area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmodMerge {
    pub rural_codes: BTreeSet<i16>,
    pub urban_codes: BTreeSet<i16>,
    pub water_code: i16,
    /// Target id for Built-Area pixels over SMOD water or nodata.
    pub fallback_class: i16,
}

impl Default for SmodMerge {
    fn default() -> Self {
        Self {
            rural_codes: [11, 12, SMOD_RURAL_CLUSTER].into_iter().collect(),
            urban_codes: [21, 22, 23, SMOD_URBAN_CENTRE].into_iter().collect(),
            water_code: SMOD_WATER,
            fallback_class: RURAL,
        }
    }
}

impl SmodMerge {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.rural_codes.intersection(&self.urban_codes).next() {
            return Err(Error::Config(format!("SMOD code {c} is both rural and urban")));
        }
        if !(IGNORE..i16::from(NUM_TARGET_CLASSES)).contains(&self.fallback_class) {
            return Err(Error::Config(format!(
                "fallback class {} is not a target id",
                self.fallback_class
            )));
        }
        Ok(())
    }
}

/// Relabel Built-Area pixels as rural or urban from the SMOD cell beneath
/// them. SMOD is nearest-neighbour resampled onto the label grid first;
/// every other pixel passes through untouched.
pub fn fuse_builtarea(esri: &LabelRaster, smod: &LabelRaster, merge: &SmodMerge) -> Result<LabelRaster> {
    merge.validate()?;
    let smod_on_grid = resample_labels_to_grid(smod, esri.transform(), esri.width(), esri.height())?;
    let values = esri
        .values()
        .iter()
        .zip(smod_on_grid.values())
        .enumerate()
        .map(|(i, (&v, &s))| match v {
            BUILT_AREA_INTERIM => {
                if merge.rural_codes.contains(&s) {
                    Ok(RURAL)
                } else if merge.urban_codes.contains(&s) {
                    Ok(URBAN)
                } else if s == merge.water_code || s == IGNORE {
                    Ok(merge.fallback_class)
                } else {
                    Err(Error::Data(format!("unknown SMOD code {s} under pixel {i}")))
                }
            }
            IGNORE..=7 => Ok(v),
            other => Err(Error::Data(format!("label {other} at pixel {i} is not a target id"))),
        })
        .collect::<Result<Vec<_>>>()?;
    LabelRaster::new(
        esri.width(),
        esri.height(),
        values,
        *esri.transform(),
        NUM_TARGET_CLASSES,
    )
}

/// Pixel count per class id `0..k`; ignore pixels are skipped.
pub fn class_counts(labels: &LabelRaster, k: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; k];
    for &v in labels.values() {
        if v == IGNORE {
            continue;
        }
        *counts
            .get_mut(v as usize)
            .ok_or_else(|| Error::Data(format!("class {v} outside 0..{k}")))? += 1;
    }
    Ok(counts)
}

pub fn distribution_from_counts(counts: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("no labelled pixels; class distribution undefined".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Proportion `p_k` of each target class over the non-ignore pixels of all
/// rasters.
pub fn class_distribution(labels: &[&LabelRaster]) -> Result<Vec<f64>> {
    let k = NUM_TARGET_CLASSES as usize;
    let mut counts = vec![0u64; k];
    for l in labels {
        for (acc, c) in counts.iter_mut().zip(class_counts(l, k)?) {
            *acc += c;
        }
    }
    distribution_from_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    fn raw(values: Vec<i16>) -> LabelRaster {
        LabelRaster::new(values.len() as u32, 1, values, GeoTransform::default(), 12).unwrap()
    }

    #[test]
    fn remaps_table_codes() {
        let out = remap_esri(&raw(vec![1, 2, 4, 5, 8, 11, 9, 10, 0, 7]), &ClassMap::default()).unwrap();
        assert_eq!(out.values(), &[0, 1, 2, 3, 4, 5, -1, -1, -1, BUILT_AREA_INTERIM]);
    }

    #[test]
    fn unknown_code_reports_pixel() {
        let err = remap_esri(&raw(vec![1, 3]), &ClassMap::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("code 3") && msg.contains("pixel 1"), "{msg}");
    }

    fn fuse_one(esri_raw: i16, smod_code: i16) -> i16 {
        let esri = remap_esri(&raw(vec![esri_raw]), &ClassMap::default()).unwrap();
        let smod = LabelRaster::new(1, 1, vec![smod_code], GeoTransform::north_up(0.0, 0.0, 100.0, 0), 31)
            .unwrap();
        let smod = smod
            .with_transform(GeoTransform::north_up(-50.0, 50.0, 100.0, 0))
            .unwrap();
        fuse_builtarea(&esri, &smod, &SmodMerge::default()).unwrap().values()[0]
    }

    #[test]
    fn built_area_follows_smod() {
        assert_eq!(fuse_one(7, 30), 7);
        assert_eq!(fuse_one(7, 21), 7);
        assert_eq!(fuse_one(7, 13), 6);
        assert_eq!(fuse_one(7, 11), 6);
        assert_eq!(fuse_one(7, 10), 6);
        assert_eq!(fuse_one(1, 30), 0);
        assert_eq!(fuse_one(9, 30), -1);
    }

    #[test]
    fn fallback_is_configurable() {
        let esri = remap_esri(&raw(vec![7]), &ClassMap::default()).unwrap();
        let smod = LabelRaster::new(1, 1, vec![-1], GeoTransform::north_up(-5.0, 5.0, 10.0, 0), 31)
            .unwrap();
        let merge = SmodMerge {
            fallback_class: 7,
            ..SmodMerge::default()
        };
        assert_eq!(fuse_builtarea(&esri, &smod, &merge).unwrap().values(), &[7]);
    }

    #[test]
    fn overlapping_code_sets_rejected() {
        let mut m = SmodMerge::default();
        m.urban_codes.insert(13);
        assert!(matches!(m.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn disjoint_extent_is_coverage_error() {
        let esri = remap_esri(&raw(vec![7]), &ClassMap::default()).unwrap();
        let smod = LabelRaster::new(1, 1, vec![30], GeoTransform::north_up(1e6, 1e6, 10.0, 0), 31)
            .unwrap();
        assert!(matches!(
            fuse_builtarea(&esri, &smod, &SmodMerge::default()),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn distributions() {
        let l = LabelRaster::new(8, 1, (0..8).collect(), GeoTransform::default(), 8).unwrap();
        assert!(class_distribution(&[&l]).unwrap().iter().all(|&p| p == 0.125));
        let only0 = LabelRaster::filled(3, 3, 0, 8).unwrap();
        let p = class_distribution(&[&only0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1..].iter().all(|&x| x == 0.0));
        let three = LabelRaster::new(4, 1, vec![0, 0, 5, -1], GeoTransform::default(), 8).unwrap();
        let p = class_distribution(&[&three]).unwrap();
        assert_eq!(p[0], 2.0 / 3.0);
        assert_eq!(p[5], 1.0 / 3.0);
        let ignored = LabelRaster::filled(2, 2, -1, 8).unwrap();
        assert!(matches!(class_distribution(&[&ignored]), Err(Error::Empty(_))));
    }

    #[test]
    fn esri_inverse_round_trips_through_fusion() {
        let t = LabelRaster::new(4, 1, vec![0, 5, 6, -1], GeoTransform::default(), 8).unwrap();
        let codes = esri_codes_from_targets(&t).unwrap();
        assert_eq!(codes.values(), &[1, 11, 7, 0]);
    }

    proptest! {
        #[test]
        fn fusion_only_touches_built_area(
            codes in proptest::collection::vec(prop::sample::select(vec![0i16, 1, 2, 4, 5, 7, 8, 9, 10, 11]), 16),
            smod_codes in proptest::collection::vec(prop::sample::select(vec![-1i16, 10, 11, 12, 13, 21, 22, 23, 30]), 4),
        ) {
            let esri_raw = LabelRaster::new(4, 4, codes, GeoTransform::north_up(0.0, 4.0, 1.0, 0), 12).unwrap();
            let smod = LabelRaster::new(2, 2, smod_codes, GeoTransform::north_up(0.0, 4.0, 2.0, 0), 31).unwrap();
            let interim = remap_esri(&esri_raw, &ClassMap::default()).unwrap();
            let fused = fuse_builtarea(&interim, &smod, &SmodMerge::default()).unwrap();
            for (a, b) in interim.values().iter().zip(fused.values()) {
                if *a == BUILT_AREA_INTERIM {
                    prop_assert!(*b == 6 || *b == 7);
                } else {
                    prop_assert_eq!(a, b);
                }
                prop_assert!((-1..=7).contains(b));
            }
        }

        #[test]
        fn distribution_sums_to_one(vals in proptest::collection::vec(-1i16..8, 1..200)) {
            prop_assume!(vals.iter().any(|&v| v >= 0));
            let l = LabelRaster::new(vals.len() as u32, 1, vals, GeoTransform::default(), 8).unwrap();
            let p = class_distribution(&[&l]).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
