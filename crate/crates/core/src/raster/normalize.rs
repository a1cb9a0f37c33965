use serde::{Deserialize, Serialize};

use super::RasterTile;
use crate::error::{Error, Result};

/// Value range mapped onto `[0, 1]` for one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub min: f32,
    pub max: f32,
}

impl BandRange {
    pub fn new(min: f32, max: f32) -> Self {
        Self { min, max }
    }
}

/// Min-max scale every band into `[0, 1]`, clamping out-of-range values.
/// Nodata samples become `0`; the tile keeps its sentinel so later stages
/// can still tell it apart from real data in other rasters.
pub fn normalize_bands(t: &RasterTile, ranges: &[BandRange]) -> Result<RasterTile> {
    if ranges.len() != t.band_count() {
        return Err(Error::Config(format!(
            "{} band ranges for {} bands",
            ranges.len(),
            t.band_count()
        )));
    }
    if let Some((i, r)) = ranges
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.max > r.min) || !r.min.is_finite() || !r.max.is_finite())
    {
        return Err(Error::Config(format!(
            "band {i}: range ({}, {}) needs finite max > min",
            r.min, r.max
        )));
    }
    let bands = t
        .bands()
        .iter()
        .zip(ranges)
        .map(|(band, r)| {
            let span = r.max - r.min;
            band.iter()
                .map(|&v| {
                    if t.is_nodata(v) || v.is_nan() {
                        0.0
                    } else {
                        ((v - r.min) / span).clamp(0.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    RasterTile::new(
        t.width(),
        t.height(),
        bands,
        t.band_names().to_vec(),
        t.nodata(),
        *t.transform(),
    )
}
