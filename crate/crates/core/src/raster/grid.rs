use serde::{Deserialize, Serialize};

use super::GeoTransform;
use crate::error::{Error, Result};

/// Spacing between sample points, and side length of each tile, in meters.
pub const TILE_SIZE_M: f64 = 10_000.0;
/// Tile side length in pixels at 10 m resolution.
pub const TILE_PIXELS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x < self.max_x && y >= self.min_y && y < self.max_y
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_id: String,
    pub country: String,
    pub bbox: BBox,
    pub width_px: u32,
    pub height_px: u32,
}

impl TileSpec {
    /// North-up transform placing the tile's pixels on its bounding square.
    pub fn transform(&self, epsg: u32) -> GeoTransform {
        GeoTransform::north_up(
            self.bbox.min_x,
            self.bbox.max_y,
            self.bbox.width() / f64::from(self.width_px),
            epsg,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub tiles: Vec<TileSpec>,
}

/// Maps a world point to the country containing it.
pub trait CountryAssigner {
    fn country_at(&self, x: f64, y: f64) -> Option<String>;
}

impl<F> CountryAssigner for F
where
    F: Fn(f64, f64) -> Option<String>,
{
    fn country_at(&self, x: f64, y: f64) -> Option<String> {
        self(x, y)
    }
}

/// Countries as axis-aligned rectangles; first match wins.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RectPartition {
    pub parts: Vec<(String, BBox)>,
}

impl RectPartition {
    /// Lay `codes` out left to right as equal-width strips of `bbox`.
    pub fn strips(bbox: BBox, codes: &[String]) -> Self {
        let w = bbox.width() / codes.len().max(1) as f64;
        let parts = codes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let x0 = bbox.min_x + i as f64 * w;
                (c.clone(), BBox::new(x0, bbox.min_y, x0 + w, bbox.max_y))
            })
            .collect();
        Self { parts }
    }
}

impl CountryAssigner for RectPartition {
    fn country_at(&self, x: f64, y: f64) -> Option<String> {
        self.parts
            .iter()
            .find(|(_, b)| b.contains(x, y))
            .map(|(c, _)| c.clone())
    }
}

/// Sample points every 10 km inside `bbox`, one 10×10 km tile per point.
///
/// Tiles that would extend past the box are dropped, as are tiles whose
/// centre falls outside every country. Rows run north to south.
pub fn make_grid(bbox: BBox, assigner: &dyn CountryAssigner) -> Result<TileGrid> {
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
        return Err(Error::Data(format!("degenerate bbox {bbox:?}")));
    }
    let eps = 1e-6;
    let cols = ((bbox.width() + eps) / TILE_SIZE_M).floor() as usize;
    let rows = ((bbox.height() + eps) / TILE_SIZE_M).floor() as usize;
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let max_y = bbox.max_y - r as f64 * TILE_SIZE_M;
        for c in 0..cols {
            let min_x = bbox.min_x + c as f64 * TILE_SIZE_M;
            let tb = BBox::new(min_x, max_y - TILE_SIZE_M, min_x + TILE_SIZE_M, max_y);
            let (cx, cy) = tb.center();
            if let Some(country) = assigner.country_at(cx, cy) {
                tiles.push(TileSpec {
                    tile_id: format!("{country}_r{r:03}c{c:03}"),
                    country,
                    bbox: tb,
                    width_px: TILE_PIXELS,
                    height_px: TILE_PIXELS,
                });
            }
        }
    }
    Ok(TileGrid { tiles })
}
