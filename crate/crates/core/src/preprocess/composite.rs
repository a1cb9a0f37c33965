use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::RasterTile;

/// Time series of co-registered observations of one tile.
#[derive(Debug, Clone)]
pub struct ObservationStack {
    observations: Vec<RasterTile>,
    timestamps: Vec<u32>,
}

impl ObservationStack {
    pub fn new(observations: Vec<RasterTile>, timestamps: Vec<u32>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::Empty("observation stack has no observations".into()))?;
        if timestamps.len() != observations.len() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} observations",
                timestamps.len(),
                observations.len()
            )));
        }
        if let Some(i) = observations.iter().position(|o| !o.same_geometry(first)) {
            return Err(Error::Shape(format!(
                "observation {i} differs in size, band count or transform from observation 0"
            )));
        }
        Ok(Self {
            observations,
            timestamps,
        })
    }

    /// Stack with ordinal timestamps `0..n`.
    pub fn from_observations(observations: Vec<RasterTile>) -> Result<Self> {
        let ts = (0..observations.len() as u32).collect();
        Self::new(observations, ts)
    }

    pub fn observations(&self) -> &[RasterTile] {
        &self.observations
    }

    pub fn timestamps(&self) -> &[u32] {
        &self.timestamps
    }
}

fn median_of(buf: &mut [f32]) -> f32 {
    buf.sort_unstable_by(f32::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        // mean of the middle pair, in f64 to avoid overflow at extreme values
        ((f64::from(buf[n / 2 - 1]) + f64::from(buf[n / 2])) / 2.0) as f32
    }
}

/// Per-pixel, per-band median over all valid observations. Pixels with no
/// valid observation stay nodata.
pub fn median_composite(stack: &ObservationStack) -> Result<RasterTile> {
    let obs = stack.observations();
    let first = &obs[0];
    let nodata = first.nodata();
    let bands = (0..first.band_count())
        .map(|b| {
            let layers: Vec<&[f32]> = obs.iter().map(|o| o.band(b)).collect();
            let mut out = vec![0f32; first.len()];
            out.par_chunks_mut(4096)
                .enumerate()
                .for_each_with(Vec::with_capacity(obs.len()), |buf, (chunk, dst)| {
                    let base = chunk * 4096;
                    for (j, slot) in dst.iter_mut().enumerate() {
                        buf.clear();
                        for (o, layer) in obs.iter().zip(&layers) {
                            let v = layer[base + j];
                            if !o.is_nodata(v) && !v.is_nan() {
                                buf.push(v);
                            }
                        }
                        *slot = if buf.is_empty() { nodata } else { median_of(buf) };
                    }
                });
            out
        })
        .collect();
    RasterTile::new(
        first.width(),
        first.height(),
        bands,
        first.band_names().to_vec(),
        nodata,
        *first.transform(),
    )
}

/// Boolean per-pixel mask; `true` marks a pixel to discard (cloud, shadow).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub width: u32,
    pub height: u32,
    pub masked: Vec<bool>,
}

impl MaskGrid {
    pub fn new(width: u32, height: u32, masked: Vec<bool>) -> Result<Self> {
        if masked.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "{} mask cells for a {width}x{height} grid",
                masked.len()
            )));
        }
        Ok(Self {
            width,
            height,
            masked,
        })
    }
}

/// Set every band of each masked pixel to the tile's nodata value.
pub fn apply_quality_mask(t: &RasterTile, mask: &MaskGrid) -> Result<RasterTile> {
    if (mask.width, mask.height) != (t.width(), t.height()) {
        return Err(Error::Shape(format!(
            "mask is {}x{}, tile is {}x{}",
            mask.width,
            mask.height,
            t.width(),
            t.height()
        )));
    }
    let mut out = t.clone();
    let nodata = t.nodata();
    for b in 0..out.band_count() {
        for (v, &m) in out.band_mut(b).iter_mut().zip(&mask.masked) {
            if m {
                *v = nodata;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    const ND: f32 = f32::NEG_INFINITY;

    fn px(vals: &[f32]) -> Vec<RasterTile> {
        vals.iter()
            .map(|&v| {
                RasterTile::new(1, 1, vec![vec![v]], vec!["b".into()], ND, GeoTransform::default())
                    .unwrap()
            })
            .collect()
    }

    fn composite_of(vals: &[f32]) -> f32 {
        let stack = ObservationStack::from_observations(px(vals)).unwrap();
        median_composite(&stack).unwrap().band(0)[0]
    }

    #[test]
    fn odd_even_masked_and_single() {
        assert_eq!(composite_of(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(composite_of(&[3.0, ND, 1.0]), 2.0);
        assert_eq!(composite_of(&[4.5]), 4.5);
        assert_eq!(composite_of(&[ND, ND]), ND);
    }

    #[test]
    fn empty_and_mismatched_stacks() {
        assert!(matches!(
            ObservationStack::from_observations(vec![]),
            Err(Error::Empty(_))
        ));
        let a = RasterTile::filled(2, 2, 1, 0.0).unwrap();
        let b = RasterTile::filled(2, 3, 1, 0.0).unwrap();
        assert!(matches!(
            ObservationStack::from_observations(vec![a, b]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mask_all_none_and_checkerboard() {
        let t = RasterTile::filled(4, 4, 2, 1.0).unwrap();
        let none = MaskGrid::new(4, 4, vec![false; 16]).unwrap();
        assert_eq!(apply_quality_mask(&t, &none).unwrap(), t);
        let all = MaskGrid::new(4, 4, vec![true; 16]).unwrap();
        let out = apply_quality_mask(&t, &all).unwrap();
        assert!(out.bands().iter().flatten().all(|&v| v == ND));
        let checker: Vec<bool> = (0..16).map(|i| (i % 4 + i / 4) % 2 == 0).collect();
        let out = apply_quality_mask(&t, &MaskGrid::new(4, 4, checker).unwrap()).unwrap();
        for b in 0..2 {
            assert_eq!(out.band(b).iter().filter(|&&v| v == ND).count(), 8);
        }
        let wrong = MaskGrid::new(2, 2, vec![false; 4]).unwrap();
        assert!(matches!(apply_quality_mask(&t, &wrong), Err(Error::Shape(_))));
    }

    fn brute_median(mut v: Vec<f32>) -> f32 {
        // textbook definition, independent of the production helper
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            ((v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0) as f32
        }
    }

    proptest! {
        #[test]
        fn matches_sort_oracle_and_is_order_free(
            stack in proptest::collection::vec(proptest::collection::vec(-100f32..100.0, 9), 1..7),
            rot in 0usize..7,
        ) {
            let tiles: Vec<RasterTile> = stack.iter().map(|vals| {
                RasterTile::new(3, 3, vec![vals.clone()], vec!["b".into()], ND, GeoTransform::default()).unwrap()
            }).collect();
            let got = median_composite(&ObservationStack::from_observations(tiles.clone()).unwrap()).unwrap();
            for p in 0..9 {
                let col: Vec<f32> = stack.iter().map(|v| v[p]).collect();
                prop_assert_eq!(got.band(0)[p], brute_median(col));
            }
            let mut rotated = tiles;
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let again = median_composite(&ObservationStack::from_observations(rotated).unwrap()).unwrap();
            prop_assert_eq!(got.band(0), again.band(0));
        }
    }
}
