//! Sliding-window inference over rasters of any size.
//!
//! Windows of `window` pixels are placed at a stride of
//! `window - 2 * crop_margin`; only the centre crop of each window is kept.
//! Raster borders are reflect-padded so edge pixels still see a full window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LogitRaster;
use crate::raster::{LabelRaster, RasterTile};

/// Side length of the model input sub-tiles.
pub const SUBTILE: u32 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilingScheme {
    pub window: u32,
    pub crop_margin: u32,
    #[serde(default = "reflect")]
    pub padding_mode: PaddingMode,
}

fn reflect() -> PaddingMode {
    PaddingMode::Reflect
}

impl Default for TilingScheme {
    fn default() -> Self {
        Self {
            window: SUBTILE,
            crop_margin: 25,
            padding_mode: PaddingMode::Reflect,
        }
    }
}

impl TilingScheme {
    pub fn new(window: u32, crop_margin: u32) -> Result<Self> {
        let s = Self {
            window,
            crop_margin,
            padding_mode: PaddingMode::Reflect,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || 2 * self.crop_margin >= self.window {
            return Err(Error::Config(format!(
                "window {} with crop margin {} leaves no centre crop",
                self.window, self.crop_margin
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.window - 2 * self.crop_margin
    }
}

/// Pixel span `[start, end)` along one axis written by one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    /// First pixel covered by the window (may be negative, i.e. padding).
    window_start: i64,
    start: usize,
    end: usize,
}

/// Window layout along one axis of length `len`.
///
/// Crop starts sit at multiples of the stride, with the last one pulled back
/// so its crop ends at the raster edge. A pixel inside several crops goes to
/// the window it is deepest in (distance to the nearer window edge); ties go
/// to the earlier window.
fn axis_spans(len: usize, scheme: &TilingScheme) -> Vec<Span> {
    let s = scheme.stride() as usize;
    let m = i64::from(scheme.crop_margin);
    let w = i64::from(scheme.window);
    let mut crops: Vec<usize> = (0..).map(|j| j * s).take_while(|p| p + s < len).collect();
    crops.push(len.saturating_sub(s));
    crops.dedup();

    let mut owner = vec![0usize; len];
    for (x, o) in owner.iter_mut().enumerate() {
        let mut best: Option<(i64, usize)> = None;
        for (j, &p) in crops.iter().enumerate() {
            if x < p || x >= p + s {
                continue;
            }
            let ws = p as i64 - m;
            let depth = (x as i64 - ws).min(ws + w - 1 - x as i64);
            if best.is_none_or(|(d, _)| depth > d) {
                best = Some((depth, j));
            }
        }
        *o = best.expect("crops cover the axis").1;
    }
    crops
        .iter()
        .enumerate()
        .filter_map(|(j, &p)| {
            let start = owner.iter().position(|&o| o == j)?;
            let end = owner.iter().rposition(|&o| o == j)? + 1;
            Some(Span {
                window_start: p as i64 - m,
                start,
                end,
            })
        })
        .collect()
}

/// Stitched labels plus how many times each pixel was written.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchTrace {
    pub labels: LabelRaster,
    pub write_counts: Vec<u32>,
}

pub fn smooth_predict<F>(classify: F, raster: &RasterTile, scheme: &TilingScheme) -> Result<LabelRaster>
where
    F: Fn(&RasterTile) -> Result<LogitRaster> + Sync,
{
    smooth_predict_traced(classify, raster, scheme).map(|t| t.labels)
}

pub fn smooth_predict_traced<F>(classify: F, raster: &RasterTile, scheme: &TilingScheme) -> Result<StitchTrace>
where
    F: Fn(&RasterTile) -> Result<LogitRaster> + Sync,
{
    scheme.validate()?;
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Empty("raster has no pixels".into()));
    }
    let xs = axis_spans(w, scheme);
    let ys = axis_spans(h, scheme);
    let jobs: Vec<(Span, Span)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let win = scheme.window;

    let blocks: Vec<(Vec<i16>, usize)> = jobs
        .par_iter()
        .map(|&(sx, sy)| {
            let tile = raster.window_reflect(sx.window_start, sy.window_start, win, win);
            let logits = classify(&tile)?;
            if logits.width != win || logits.height != win || logits.data.len() != logits.num_classes * tile.len() {
                return Err(Error::Contract(format!(
                    "classifier returned {}x{} for a {win}x{win} window",
                    logits.width, logits.height
                )));
            }
            let labels = logits.argmax_values();
            let mut block = Vec::with_capacity((sx.end - sx.start) * (sy.end - sy.start));
            for y in sy.start..sy.end {
                let wy = (y as i64 - sy.window_start) as usize;
                for x in sx.start..sx.end {
                    let wx = (x as i64 - sx.window_start) as usize;
                    block.push(labels[wy * win as usize + wx]);
                }
            }
            Ok((block, logits.num_classes))
        })
        .collect::<Result<_>>()?;

    let mut out = vec![0i16; w * h];
    let mut counts = vec![0u32; w * h];
    let mut k = 0;
    for (&(sx, sy), (block, nc)) in jobs.iter().zip(&blocks) {
        k = k.max(*nc);
        let bw = sx.end - sx.start;
        for (r, y) in (sy.start..sy.end).enumerate() {
            let dst = y * w + sx.start;
            out[dst..dst + bw].copy_from_slice(&block[r * bw..(r + 1) * bw]);
            for c in &mut counts[dst..dst + bw] {
                *c += 1;
            }
        }
    }
    let k = u8::try_from(k).map_err(|_| Error::Shape(format!("{k} classes exceed 255")))?;
    Ok(StitchTrace {
        labels: LabelRaster::new(raster.width(), raster.height(), out, *raster.transform(), k)?,
        write_counts: counts,
    })
}

/// Non-overlapping tiling that keeps each window's full output.
pub fn naive_predict<F>(classify: F, raster: &RasterTile, window: u32) -> Result<LabelRaster>
where
    F: Fn(&RasterTile) -> Result<LogitRaster> + Sync,
{
    smooth_predict(classify, raster, &TilingScheme::new(window, 0)?)
}

/// Cut `tile` into `size x size` sub-tiles in row-major order.
pub fn split_subtiles(tile: &RasterTile, size: u32) -> Result<Vec<RasterTile>> {
    if size == 0 || tile.width() % size != 0 || tile.height() % size != 0 {
        return Err(Error::Shape(format!(
            "{}x{} does not split into {size}x{size} sub-tiles",
            tile.width(),
            tile.height()
        )));
    }
    let mut out = Vec::new();
    for r in (0..tile.height()).step_by(size as usize) {
        for c in (0..tile.width()).step_by(size as usize) {
            out.push(tile.window_reflect(i64::from(c), i64::from(r), size, size));
        }
    }
    Ok(out)
}

/// Inverse of [`split_subtiles`] for a grid `cols` sub-tiles wide.
pub fn reassemble(subtiles: &[RasterTile], cols: usize) -> Result<RasterTile> {
    let first = subtiles.first().ok_or_else(|| Error::Empty("no sub-tiles".into()))?;
    if cols == 0 || subtiles.len() % cols != 0 {
        return Err(Error::Shape(format!("{} sub-tiles do not fill {cols} columns", subtiles.len())));
    }
    let (sw, sh) = (first.width() as usize, first.height() as usize);
    if subtiles.iter().any(|t| {
        t.width() as usize != sw || t.height() as usize != sh || t.band_count() != first.band_count()
    }) {
        return Err(Error::Shape("sub-tiles differ in size or band count".into()));
    }
    let rows = subtiles.len() / cols;
    let (w, h) = (sw * cols, sh * rows);
    let mut bands = vec![vec![0f32; w * h]; first.band_count()];
    for (i, t) in subtiles.iter().enumerate() {
        let (c0, r0) = ((i % cols) * sw, (i / cols) * sh);
        for (b, band) in bands.iter_mut().enumerate() {
            let src = t.band(b);
            for y in 0..sh {
                let dst = (r0 + y) * w + c0;
                band[dst..dst + sw].copy_from_slice(&src[y * sw..(y + 1) * sw]);
            }
        }
    }
    RasterTile::new(
        w as u32,
        h as u32,
        bands,
        first.band_names().to_vec(),
        first.nodata(),
        *first.transform(),
    )
}
