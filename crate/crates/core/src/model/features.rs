use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterTile;
use crate::util::reflect_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// Odd side length of the neighbourhood-mean window; 1 disables it.
    pub context_window: usize,
    pub include_raw: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            context_window: 5,
            include_raw: true,
        }
    }
}

impl FeatureConfig {
    pub fn pixel_local() -> Self {
        Self {
            context_window: 1,
            include_raw: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_window % 2 == 0 {
            return Err(Error::Config(format!(
                "context window must be odd, got {}",
                self.context_window
            )));
        }
        if self.context_window == 1 && !self.include_raw {
            return Err(Error::Config("feature set is empty".into()));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.context_window / 2
    }

    pub fn dim(&self, bands: usize) -> usize {
        bands * (usize::from(self.include_raw) + usize::from(self.context_window > 1))
    }
}

/// Row-per-pixel feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub n: usize,
    pub dim: usize,
    pub config: FeatureConfig,
    pub data: Vec<f32>,
}

impl Features {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Features {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Features {
            n: indices.len(),
            dim: self.dim,
            config: self.config,
            data,
        }
    }

    /// Append `other`'s rows.
    pub fn extend(&mut self, other: &Features) -> Result<()> {
        if other.dim != self.dim || other.config != self.config {
            return Err(Error::Shape("cannot concatenate differing feature sets".into()));
        }
        self.data.extend_from_slice(&other.data);
        self.n += other.n;
        Ok(())
    }

    pub fn empty(dim: usize, config: FeatureConfig) -> Self {
        Self {
            n: 0,
            dim,
            config,
            data: Vec::new(),
        }
    }
}

/// Separable box mean with reflected borders.
fn box_mean(band: &[f32], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let mut horiz = vec![0f64; w * h];
    for y in 0..h {
        let row = &band[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for dx in -r..=r {
                s += f64::from(row[reflect_index(x as i64 + dx, w)]);
            }
            horiz[y * w + x] = s;
        }
    }
    let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = vec![0f64; w * h];
    for y in 0..h {
        for dy in -r..=r {
            let src = reflect_index(y as i64 + dy, h) * w;
            for x in 0..w {
                out[y * w + x] += horiz[src + x];
            }
        }
        for v in &mut out[y * w..(y + 1) * w] {
            *v /= norm;
        }
    }
    out
}

/// Per-pixel features: the raw band values (if enabled) followed by the
/// per-band mean over the `context_window` neighbourhood.
pub fn extract_features(tile: &RasterTile, cfg: &FeatureConfig) -> Result<Features> {
    cfg.validate()?;
    let (w, h) = (tile.width() as usize, tile.height() as usize);
    let nb = tile.band_count();
    let dim = cfg.dim(nb);
    let n = w * h;
    let mut data = vec![0f32; n * dim];
    let mut col = 0;
    if cfg.include_raw {
        for b in 0..nb {
            for (i, &v) in tile.band(b).iter().enumerate() {
                data[i * dim + col] = v;
            }
            col += 1;
        }
    }
    if cfg.context_window > 1 {
        for b in 0..nb {
            let means = box_mean(tile.band(b), w, h, cfg.radius());
            for (i, v) in means.into_iter().enumerate() {
                data[i * dim + col] = v as f32;
            }
            col += 1;
        }
    }
    Ok(Features {
        n,
        dim,
        config: *cfg,
        data,
    })
}
