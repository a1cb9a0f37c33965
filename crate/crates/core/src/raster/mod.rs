//! Raster data model shared by every pipeline stage.
//!
//! Band rasters ([`RasterTile`]) hold `f32` samples band-major with a nodata
//! sentinel (negative infinity unless stated otherwise). Class rasters
//! ([`LabelRaster`]) hold `i16` ids where `-1` marks ignored pixels.

mod grid;
mod io;
mod normalize;
mod resample;
mod synth;

pub use grid::{make_grid, BBox, CountryAssigner, RectPartition, TileGrid, TileSpec};
pub use grid::{TILE_PIXELS, TILE_SIZE_M};
pub use io::{read_tile, write_tile, AnyTile, HEADER_FIXED_LEN, HURT_MAGIC, HURT_VERSION};
pub use normalize::{normalize_bands, BandRange};
pub use resample::{resample_labels_to_grid, resample_nearest};
pub use synth::{
    default_class_layout, gen_synthetic_scene, ClassBlob, SyntheticScene, SyntheticSceneSpec,
    BAND_NAMES, SMOD_FACTOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for pixels excluded from training and scoring.
pub const IGNORE: i16 = -1;

/// Affine pixel → world mapping, stored in GDAL coefficient order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    /// Negative for north-up rasters.
    pub pixel_height: f64,
    pub row_rotation: f64,
    pub col_rotation: f64,
    pub epsg: u32,
}

impl GeoTransform {
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64, epsg: u32) -> Self {
        Self {
            origin_x,
            origin_y,
            pixel_width: pixel_size,
            pixel_height: -pixel_size,
            row_rotation: 0.0,
            col_rotation: 0.0,
            epsg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixel_width == 0.0 || self.pixel_height == 0.0 {
            return Err(Error::Data("geotransform pixel size must be non-zero".into()));
        }
        if self.determinant() == 0.0 {
            return Err(Error::Data("geotransform is singular".into()));
        }
        Ok(())
    }

    fn determinant(&self) -> f64 {
        self.pixel_width * self.pixel_height - self.row_rotation * self.col_rotation
    }

    /// World coordinate of fractional pixel position `(col, row)`; pixel
    /// centres sit at `+0.5`.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_width + row * self.row_rotation,
            self.origin_y + col * self.col_rotation + row * self.pixel_height,
        )
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.origin_x;
        let dy = y - self.origin_y;
        let det = self.determinant();
        (
            (dx * self.pixel_height - dy * self.row_rotation) / det,
            (dy * self.pixel_width - dx * self.col_rotation) / det,
        )
    }

    /// Transform of the sub-grid whose top-left pixel is `(col, row)`.
    pub fn offset(&self, col: i64, row: i64) -> Self {
        let (ox, oy) = self.pixel_to_world(col as f64, row as f64);
        Self {
            origin_x: ox,
            origin_y: oy,
            ..*self
        }
    }

    /// Nominal ground size of one pixel along x.
    pub fn pixel_size(&self) -> f64 {
        self.pixel_width.hypot(self.col_rotation)
    }
}

impl Default for GeoTransform {
    fn default() -> Self {
        Self::north_up(0.0, 0.0, 1.0, 0)
    }
}

/// Multi-band `f32` raster with a nodata sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterTile {
    width: u32,
    height: u32,
    bands: Vec<Vec<f32>>,
    band_names: Vec<String>,
    nodata: f32,
    transform: GeoTransform,
}

impl RasterTile {
    pub fn new(
        width: u32,
        height: u32,
        bands: Vec<Vec<f32>>,
        band_names: Vec<String>,
        nodata: f32,
        transform: GeoTransform,
    ) -> Result<Self> {
        let n = width as usize * height as usize;
        if n == 0 {
            return Err(Error::Shape("raster must have at least one pixel".into()));
        }
        if bands.is_empty() {
            return Err(Error::Shape("raster must have at least one band".into()));
        }
        if bands.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("{} bands exceed the 255 limit", bands.len())));
        }
        if let Some((i, b)) = bands.iter().enumerate().find(|(_, b)| b.len() != n) {
            return Err(Error::Shape(format!(
                "band {i} has {} samples, expected {width}x{height}={n}",
                b.len()
            )));
        }
        if band_names.len() != bands.len() {
            return Err(Error::Shape(format!(
                "{} band names for {} bands",
                band_names.len(),
                bands.len()
            )));
        }
        transform.validate()?;
        Ok(Self {
            width,
            height,
            bands,
            band_names,
            nodata,
            transform,
        })
    }

    /// Single-band raster filled with `value`.
    pub fn filled(width: u32, height: u32, bands: usize, value: f32) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(
            width,
            height,
            vec![vec![value; n]; bands],
            (1..=bands).map(|i| format!("band{i}")).collect(),
            f32::NEG_INFINITY,
            GeoTransform::default(),
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn band_count(&self) -> usize {
        self.bands.len()
    }
    pub fn band(&self, i: usize) -> &[f32] {
        &self.bands[i]
    }
    pub fn band_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.bands[i]
    }
    pub fn bands(&self) -> &[Vec<f32>] {
        &self.bands
    }
    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }
    pub fn nodata(&self) -> f32 {
        self.nodata
    }
    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn into_bands(self) -> Vec<Vec<f32>> {
        self.bands
    }

    /// Whether `v` equals the nodata sentinel (NaN sentinels match NaN).
    pub fn is_nodata(&self, v: f32) -> bool {
        v == self.nodata || (self.nodata.is_nan() && v.is_nan())
    }

    pub fn same_geometry(&self, other: &RasterTile) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bands.len() == other.bands.len()
            && self.transform == other.transform
    }

    /// Copy a `w x h` window starting at `(col, row)`; out-of-range samples
    /// are reflected back into the raster.
    pub fn window_reflect(&self, col: i64, row: i64, w: u32, h: u32) -> RasterTile {
        let (width, height) = (self.width as usize, self.height as usize);
        let cols: Vec<usize> = (0..w as i64)
            .map(|c| crate::util::reflect_index(col + c, width))
            .collect();
        let bands = self
            .bands
            .iter()
            .map(|band| {
                let mut out = Vec::with_capacity(w as usize * h as usize);
                for r in 0..h as i64 {
                    let src_row = crate::util::reflect_index(row + r, height) * width;
                    out.extend(cols.iter().map(|&c| band[src_row + c]));
                }
                out
            })
            .collect();
        RasterTile {
            width: w,
            height: h,
            bands,
            band_names: self.band_names.clone(),
            nodata: self.nodata,
            transform: self.transform.offset(col, row),
        }
    }
}

/// Single-band class-id raster. Valid ids are `-1` (ignore) and
/// `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRaster {
    width: u32,
    height: u32,
    values: Vec<i16>,
    transform: GeoTransform,
    num_classes: u8,
}

impl LabelRaster {
    pub fn new(
        width: u32,
        height: u32,
        values: Vec<i16>,
        transform: GeoTransform,
        num_classes: u8,
    ) -> Result<Self> {
        let n = width as usize * height as usize;
        if n == 0 {
            return Err(Error::Shape("label raster must have at least one pixel".into()));
        }
        if values.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} raster",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v < IGNORE || v >= i16::from(num_classes))
        {
            return Err(Error::Data(format!(
                "label {v} at pixel {i} outside {{-1, 0..{}}}",
                num_classes
            )));
        }
        transform.validate()?;
        Ok(Self {
            width,
            height,
            values,
            transform,
            num_classes,
        })
    }

    pub fn filled(width: u32, height: u32, value: i16, num_classes: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![value; width as usize * height as usize],
            GeoTransform::default(),
            num_classes,
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[i16] {
        &self.values
    }
    pub fn into_values(self) -> Vec<i16> {
        self.values
    }
    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }
    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn get(&self, col: u32, row: u32) -> i16 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    /// Class of the pixel containing world point `(x, y)`, if inside.
    pub fn sample_world(&self, x: f64, y: f64) -> Option<i16> {
        let (c, r) = self.transform.world_to_pixel(x, y);
        let (c, r) = (c.floor(), r.floor());
        if c < 0.0 || r < 0.0 || c >= f64::from(self.width) || r >= f64::from(self.height) {
            return None;
        }
        Some(self.get(c as u32, r as u32))
    }

    pub fn with_transform(mut self, transform: GeoTransform) -> Result<Self> {
        transform.validate()?;
        self.transform = transform;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_ragged_bands() {
        let err = RasterTile::new(
            2,
            2,
            vec![vec![0.0; 4], vec![0.0; 3]],
            vec!["a".into(), "b".into()],
            f32::NEG_INFINITY,
            GeoTransform::default(),
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_name_count_mismatch() {
        let err = RasterTile::new(
            1,
            1,
            vec![vec![0.0]],
            vec![],
            f32::NEG_INFINITY,
            GeoTransform::default(),
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_zero_pixel_size() {
        let mut gt = GeoTransform::default();
        gt.pixel_height = 0.0;
        assert!(gt.validate().is_err());
    }

    #[test]
    fn label_range_checked() {
        assert!(LabelRaster::new(1, 2, vec![-1, 7], GeoTransform::default(), 8).is_ok());
        assert!(matches!(
            LabelRaster::new(1, 2, vec![-2, 0], GeoTransform::default(), 8),
            Err(Error::Data(_))
        ));
        assert!(LabelRaster::new(1, 1, vec![8], GeoTransform::default(), 8).is_err());
    }

    #[test]
    fn sample_world_north_up() {
        let gt = GeoTransform::north_up(100.0, 50.0, 10.0, 3857);
        let l = LabelRaster::new(2, 2, vec![0, 1, 2, 3], gt, 4).unwrap();
        assert_eq!(l.sample_world(105.0, 45.0), Some(0));
        assert_eq!(l.sample_world(115.0, 35.0), Some(3));
        assert_eq!(l.sample_world(95.0, 45.0), None);
    }

    proptest! {
        #[test]
        fn pixel_world_round_trip(
            ox in -1e6f64..1e6, oy in -1e6f64..1e6,
            pw in 0.5f64..1000.0, ph in -1000.0f64..-0.5,
            rr in -0.1f64..0.1, cr in -0.1f64..0.1,
            col in -5000.0f64..5000.0, row in -5000.0f64..5000.0,
        ) {
            let gt = GeoTransform {
                origin_x: ox, origin_y: oy, pixel_width: pw, pixel_height: ph,
                row_rotation: rr, col_rotation: cr, epsg: 32633,
            };
            let (x, y) = gt.pixel_to_world(col, row);
            let (c2, r2) = gt.world_to_pixel(x, y);
            prop_assert!((c2 - col).abs() < 1e-9);
            prop_assert!((r2 - row).abs() < 1e-9);
        }
    }
}
