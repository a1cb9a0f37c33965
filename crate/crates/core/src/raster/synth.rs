//! Deterministic synthetic scenes standing in for satellite ingestion.
//!
//! A scene is a Voronoi partition of the tile into class regions. Settlement
//! type is decided on the coarse SMOD grid first (one cell per
//! [`SMOD_FACTOR`]² pixels); built pixels then take rural or urban from the
//! cell they fall in, so fusing the scene's ESRI-style labels with its SMOD
//! raster reproduces the truth exactly. Yearly observations are the class
//! mean plus seeded Gaussian noise, with a `cloud_fraction` share of
//! (pixel, year) observations blanked to nodata.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GeoTransform, LabelRaster, RasterTile};
use crate::error::{Error, Result};
use crate::preprocess::{SMOD_RURAL_CLUSTER, SMOD_URBAN_CENTRE};
use crate::util::derive_seed;

/// Fine pixels per SMOD cell side (10 m → 1 km).
pub const SMOD_FACTOR: u32 = 100;

pub const BAND_NAMES: [&str; 7] = ["blue", "green", "red", "nir", "swir1", "swir2", "nightlights"];

const RURAL: i16 = 6;
const URBAN: i16 = 7;
const WATER: i16 = 0;

/// One class of the procedural layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassBlob {
    /// Target class id, `0..=7`.
    pub class_id: i16,
    /// Relative share of Voronoi regions given to this class.
    pub weight: f64,
    pub band_mean: Vec<f32>,
    pub band_std: Vec<f32>,
}

fn default_regions() -> usize {
    64
}
fn default_pixel_size() -> f64 {
    10.0
}
fn default_epsg() -> u32 {
    3857
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub width: u32,
    pub height: u32,
    pub num_years: usize,
    pub class_layout: Vec<ClassBlob>,
    pub cloud_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_regions")]
    pub num_regions: usize,
    #[serde(default = "default_pixel_size")]
    pub pixel_size: f64,
    #[serde(default)]
    pub origin_x: f64,
    #[serde(default)]
    pub origin_y: f64,
    #[serde(default = "default_epsg")]
    pub epsg: u32,
}

impl SyntheticSceneSpec {
    pub fn new(width: u32, height: u32, seed: u64) -> Self {
        Self {
            width,
            height,
            num_years: 3,
            class_layout: default_class_layout(),
            cloud_fraction: 0.1,
            seed,
            num_regions: default_regions(),
            pixel_size: default_pixel_size(),
            origin_x: 0.0,
            origin_y: 0.0,
            epsg: default_epsg(),
        }
    }

    pub fn transform(&self) -> GeoTransform {
        GeoTransform::north_up(self.origin_x, self.origin_y, self.pixel_size, self.epsg)
    }

    fn coarse_dims(&self) -> (u32, u32) {
        (
            self.width.div_ceil(SMOD_FACTOR),
            self.height.div_ceil(SMOD_FACTOR),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene must have at least one pixel".into()));
        }
        if self.num_years == 0 {
            return Err(Error::Config("scene needs at least one year".into()));
        }
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            return Err(Error::Config(format!(
                "cloud_fraction {} outside [0, 1]",
                self.cloud_fraction
            )));
        }
        if !(self.pixel_size > 0.0) {
            return Err(Error::Config("pixel_size must be positive".into()));
        }
        let first = self
            .class_layout
            .first()
            .ok_or_else(|| Error::Config("class layout is empty".into()))?;
        let nb = first.band_mean.len();
        if nb == 0 || nb > u8::MAX as usize {
            return Err(Error::Config(format!("layout has {nb} bands")));
        }
        let mut seen = [false; 8];
        for blob in &self.class_layout {
            if !(0..8).contains(&blob.class_id) {
                return Err(Error::Config(format!("class id {} not in 0..=7", blob.class_id)));
            }
            if std::mem::replace(&mut seen[blob.class_id as usize], true) {
                return Err(Error::Config(format!("class {} listed twice", blob.class_id)));
            }
            if blob.band_mean.len() != nb || blob.band_std.len() != nb {
                return Err(Error::Config(format!(
                    "class {} band statistics do not have {nb} entries",
                    blob.class_id
                )));
            }
            if !(blob.weight >= 0.0 && blob.weight.is_finite()) {
                return Err(Error::Config(format!("class {} weight is invalid", blob.class_id)));
            }
        }
        let pixels = self.width as usize * self.height as usize;
        if self.num_regions.max(self.class_layout.len()) > pixels {
            return Err(Error::Config("more regions than pixels".into()));
        }
        let (cw, ch) = self.coarse_dims();
        if seen[RURAL as usize] && seen[URBAN as usize] && cw * ch < 2 {
            return Err(Error::Config(
                "rural and urban classes need at least two SMOD cells".into(),
            ));
        }
        Ok(())
    }
}

/// Default 7-band spectral signatures. Landsat bands are in scaled
/// reflectance (0..10000), nightlights in radiance units (0..100).
pub fn default_class_layout() -> Vec<ClassBlob> {
    #[rustfmt::skip]
    let table: [(i16, f64, [f32; 7]); 8] = [
        (0, 0.10, [0.08, 0.07, 0.05, 0.03, 0.02, 0.01, 0.01]),
        (1, 0.15, [0.04, 0.08, 0.05, 0.40, 0.20, 0.10, 0.01]),
        (2, 0.05, [0.06, 0.10, 0.07, 0.25, 0.10, 0.05, 0.01]),
        (3, 0.20, [0.07, 0.12, 0.12, 0.33, 0.30, 0.18, 0.02]),
        (4, 0.10, [0.20, 0.25, 0.32, 0.38, 0.50, 0.42, 0.01]),
        (5, 0.20, [0.10, 0.15, 0.20, 0.28, 0.40, 0.30, 0.01]),
        (6, 0.12, [0.13, 0.15, 0.16, 0.22, 0.28, 0.23, 0.18]),
        (7, 0.08, [0.17, 0.19, 0.21, 0.22, 0.30, 0.28, 0.60]),
    ];
    table
        .iter()
        .map(|&(class_id, weight, mean)| ClassBlob {
            class_id,
            weight,
            band_mean: scale_bands(&mean),
            band_std: scale_bands(&[0.03, 0.03, 0.03, 0.03, 0.03, 0.03, 0.04]),
        })
        .collect()
}

fn scale_bands(v: &[f32; 7]) -> Vec<f32> {
    v.iter()
        .enumerate()
        .map(|(i, x)| if i == 6 { x * 100.0 } else { x * 10_000.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub years: Vec<RasterTile>,
    pub truth: LabelRaster,
    pub smod: LabelRaster,
}

/// Split `total` regions across classes proportionally to weight, at least
/// one each, by largest remainder.
fn region_quota(layout: &[ClassBlob], total: usize) -> Vec<usize> {
    let total = total.max(layout.len());
    let wsum: f64 = layout.iter().map(|b| b.weight).sum();
    let spare = total - layout.len();
    let shares: Vec<f64> = layout
        .iter()
        .map(|b| {
            if wsum > 0.0 {
                b.weight / wsum * spare as f64
            } else {
                spare as f64 / layout.len() as f64
            }
        })
        .collect();
    let mut quota: Vec<usize> = shares.iter().map(|s| 1 + s.floor() as usize).collect();
    let mut left = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..layout.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        quota[i] += 1;
        left -= 1;
    }
    quota
}

pub fn gen_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let (w, h) = (spec.width as usize, spec.height as usize);
    let (cw, ch) = spec.coarse_dims();
    let (cw, ch) = (cw as usize, ch as usize);
    let ncells = cw * ch;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "layout"));

    let weight_of = |c: i16| {
        spec.class_layout
            .iter()
            .find(|b| b.class_id == c)
            .map(|b| b.weight)
    };
    let (w_rural, w_urban) = (weight_of(RURAL), weight_of(URBAN));

    // settlement type of every SMOD cell
    let p_urban = match (w_rural, w_urban) {
        (_, None) => 0.0,
        (None, Some(_)) => 1.0,
        (Some(r), Some(u)) if r + u > 0.0 => u / (r + u),
        _ => 0.5,
    };
    let mut cell_urban: Vec<bool> = (0..ncells).map(|_| rng.random::<f64>() < p_urban).collect();
    if w_urban.is_some() && !cell_urban.iter().any(|&u| u) {
        let i = rng.random_range(0..ncells);
        cell_urban[i] = true;
    }
    if w_rural.is_some() && cell_urban.iter().all(|&u| u) {
        let i = rng.random_range(0..ncells);
        cell_urban[i] = false;
        if w_urban.is_some() && !cell_urban.iter().any(|&u| u) {
            cell_urban[(i + 1) % ncells] = true;
        }
    }
    let urban_cells: Vec<usize> = (0..ncells).filter(|&i| cell_urban[i]).collect();
    let rural_cells: Vec<usize> = (0..ncells).filter(|&i| !cell_urban[i]).collect();

    // Voronoi seeds; built seeds land in cells of their own settlement type
    let quota = region_quota(&spec.class_layout, spec.num_regions);
    let mut taken = std::collections::HashSet::new();
    let mut seeds: Vec<(usize, usize, i16)> = Vec::new();
    let cell_pixel = |cell: usize, rng: &mut ChaCha8Rng| {
        let (cx, cy) = (cell % cw, cell / cw);
        let x0 = cx * SMOD_FACTOR as usize;
        let y0 = cy * SMOD_FACTOR as usize;
        let x1 = (x0 + SMOD_FACTOR as usize).min(w);
        let y1 = (y0 + SMOD_FACTOR as usize).min(h);
        (rng.random_range(x0..x1), rng.random_range(y0..y1))
    };
    for (blob, &n) in spec.class_layout.iter().zip(&quota) {
        for _ in 0..n {
            let mut attempts = 0;
            loop {
                let (x, y) = match blob.class_id {
                    URBAN => cell_pixel(*urban_cells.choose(&mut rng).unwrap(), &mut rng),
                    RURAL => cell_pixel(*rural_cells.choose(&mut rng).unwrap(), &mut rng),
                    _ => (rng.random_range(0..w), rng.random_range(0..h)),
                };
                attempts += 1;
                if taken.insert((x, y)) {
                    seeds.push((x, y, blob.class_id));
                    break;
                }
                if attempts > 10_000 {
                    return Err(Error::Config("could not place distinct region seeds".into()));
                }
            }
        }
    }

    let mut truth = vec![0i16; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut best = (usize::MAX, 0i16);
            for &(sx, sy, c) in &seeds {
                let d = sx.abs_diff(x).pow(2) + sy.abs_diff(y).pow(2);
                if d < best.0 {
                    best = (d, c);
                }
            }
            let cell = (y / SMOD_FACTOR as usize) * cw + x / SMOD_FACTOR as usize;
            truth[y * w + x] = match best.1 {
                RURAL | URBAN if cell_urban[cell] => URBAN,
                RURAL | URBAN => RURAL,
                c => c,
            };
        }
    }

    let smod = smod_codes(&truth, w, h, cw, ch, &cell_urban);
    let transform = spec.transform();
    let coarse_gt = GeoTransform::north_up(
        spec.origin_x,
        spec.origin_y,
        spec.pixel_size * f64::from(SMOD_FACTOR),
        spec.epsg,
    );

    let nb = spec.class_layout[0].band_mean.len();
    let mut stats = vec![None; 8];
    for blob in &spec.class_layout {
        stats[blob.class_id as usize] = Some((&blob.band_mean, &blob.band_std));
    }
    let names: Vec<String> = if nb == BAND_NAMES.len() {
        BAND_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=nb).map(|i| format!("band{i}")).collect()
    };
    let years = (0..spec.num_years)
        .map(|year| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("year{year}")));
            let mut bands = vec![vec![0f32; w * h]; nb];
            for (i, &c) in truth.iter().enumerate() {
                let (mean, std) = stats[c as usize].expect("truth classes come from the layout");
                for b in 0..nb {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    bands[b][i] = mean[b] + std[b] * z as f32;
                }
                if rng.random::<f64>() < spec.cloud_fraction {
                    for band in bands.iter_mut() {
                        band[i] = f32::NEG_INFINITY;
                    }
                }
            }
            RasterTile::new(
                spec.width,
                spec.height,
                bands,
                names.clone(),
                f32::NEG_INFINITY,
                transform,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticScene {
        years,
        truth: LabelRaster::new(spec.width, spec.height, truth, transform, 8)?,
        smod: LabelRaster::new(cw as u32, ch as u32, smod, coarse_gt, SMOD_URBAN_CENTRE as u8 + 1)?,
    })
}

fn smod_codes(
    truth: &[i16],
    w: usize,
    h: usize,
    cw: usize,
    ch: usize,
    cell_urban: &[bool],
) -> Vec<i16> {
    let mut built = vec![0usize; cw * ch];
    let mut water = vec![0usize; cw * ch];
    let mut count = vec![0usize; cw * ch];
    for y in 0..h {
        for x in 0..w {
            let cell = (y / SMOD_FACTOR as usize) * cw + x / SMOD_FACTOR as usize;
            count[cell] += 1;
            match truth[y * w + x] {
                RURAL | URBAN => built[cell] += 1,
                WATER => water[cell] += 1,
                _ => {}
            }
        }
    }
    (0..cw * ch)
        .map(|i| {
            let bf = built[i] as f64 / count[i] as f64;
            if cell_urban[i] {
                match bf {
                    f if f >= 0.5 => SMOD_URBAN_CENTRE,
                    f if f >= 0.3 => 23,
                    f if f >= 0.1 => 22,
                    _ => 21,
                }
            } else if built[i] == 0 && water[i] * 2 > count[i] {
                10
            } else if bf >= 0.1 {
                SMOD_RURAL_CLUSTER
            } else if built[i] > 0 {
                12
            } else {
                11
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSceneSpec {
        let mut s = SyntheticSceneSpec::new(220, 180, seed);
        s.num_regions = 20;
        s
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic_scene(&small(7)).unwrap();
        let b = gen_synthetic_scene(&small(7)).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.smod, b.smod);
        for (x, y) in a.years.iter().zip(&b.years) {
            let xa: Vec<u32> = x.band(3).iter().map(|v| v.to_bits()).collect();
            let ya: Vec<u32> = y.band(3).iter().map(|v| v.to_bits()).collect();
            assert_eq!(xa, ya);
        }
        let c = gen_synthetic_scene(&small(8)).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn cloud_fraction_extremes() {
        let mut s = small(1);
        s.cloud_fraction = 0.0;
        let clear = gen_synthetic_scene(&s).unwrap();
        assert!(clear
            .years
            .iter()
            .all(|t| t.bands().iter().flatten().all(|v| v.is_finite())));
        s.cloud_fraction = 1.0;
        let cloudy = gen_synthetic_scene(&s).unwrap();
        assert!(cloudy
            .years
            .iter()
            .all(|t| t.bands().iter().flatten().all(|&v| v == f32::NEG_INFINITY)));
    }

    #[test]
    fn every_layout_class_present() {
        for seed in 0..10 {
            let scene = gen_synthetic_scene(&small(seed)).unwrap();
            for c in 0..8i16 {
                assert!(scene.truth.values().contains(&c), "seed {seed} lacks class {c}");
            }
        }
    }

    #[test]
    fn smod_is_coarse_grid() {
        let scene = gen_synthetic_scene(&small(3)).unwrap();
        assert_eq!((scene.smod.width(), scene.smod.height()), (3, 2));
        assert_eq!(scene.smod.transform().pixel_width, 1000.0);
        assert_eq!(scene.years.len(), 3);
    }

    #[test]
    fn quota_sums_and_floors() {
        let layout = default_class_layout();
        let q = region_quota(&layout, 64);
        assert_eq!(q.iter().sum::<usize>(), 64);
        assert!(q.iter().all(|&n| n >= 1));
        assert_eq!(region_quota(&layout, 3).iter().sum::<usize>(), 8);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(0);
        s.cloud_fraction = 1.5;
        assert!(gen_synthetic_scene(&s).is_err());
        let mut s = small(0);
        s.class_layout[1].class_id = 0;
        assert!(gen_synthetic_scene(&s).is_err());
        let mut s = small(0);
        s.width = 50;
        s.height = 50;
        assert!(gen_synthetic_scene(&s).is_err());
    }
}
