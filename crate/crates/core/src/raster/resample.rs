use super::{GeoTransform, LabelRaster, RasterTile, IGNORE};
use crate::error::{Error, Result};

fn nearest_indices(src_len: u32, src_px: f64, dst_len: u32, dst_px: f64) -> Vec<usize> {
    let ratio = dst_px / src_px;
    (0..dst_len)
        .map(|i| {
            let s = ((f64::from(i) + 0.5) * ratio).floor() as i64;
            s.clamp(0, i64::from(src_len) - 1) as usize
        })
        .collect()
}

/// Resample to square pixels of `target_pixel_size` world units, taking
/// each output pixel from the source pixel whose area contains its centre.
/// Output extent is the source extent rounded to whole target pixels.
pub fn resample_nearest(src: &RasterTile, target_pixel_size: f64) -> Result<RasterTile> {
    if !(target_pixel_size > 0.0 && target_pixel_size.is_finite()) {
        return Err(Error::Config(format!(
            "target pixel size must be positive, got {target_pixel_size}"
        )));
    }
    let gt = src.transform();
    let (px, py) = (gt.pixel_width.abs(), gt.pixel_height.abs());
    let out_w = ((f64::from(src.width()) * px / target_pixel_size).round() as u32).max(1);
    let out_h = ((f64::from(src.height()) * py / target_pixel_size).round() as u32).max(1);
    let cols = nearest_indices(src.width(), px, out_w, target_pixel_size);
    let rows = nearest_indices(src.height(), py, out_h, target_pixel_size);
    let sw = src.width() as usize;
    let bands = src
        .bands()
        .iter()
        .map(|band| {
            let mut out = Vec::with_capacity(out_w as usize * out_h as usize);
            for &r in &rows {
                out.extend(cols.iter().map(|&c| band[r * sw + c]));
            }
            out
        })
        .collect();
    let transform = GeoTransform {
        pixel_width: target_pixel_size.copysign(gt.pixel_width),
        pixel_height: target_pixel_size.copysign(gt.pixel_height),
        ..*gt
    };
    RasterTile::new(
        out_w,
        out_h,
        bands,
        src.band_names().to_vec(),
        src.nodata(),
        transform,
    )
}

/// Nearest-neighbour resample of a class raster onto an arbitrary target
/// grid. Target pixels whose centre falls outside the source get `-1`.
/// Fails when no target pixel overlaps the source at all.
pub fn resample_labels_to_grid(
    src: &LabelRaster,
    target: &GeoTransform,
    width: u32,
    height: u32,
) -> Result<LabelRaster> {
    let mut values = Vec::with_capacity(width as usize * height as usize);
    let mut hits = 0usize;
    for r in 0..height {
        for c in 0..width {
            let (x, y) = target.pixel_to_world(f64::from(c) + 0.5, f64::from(r) + 0.5);
            match src.sample_world(x, y) {
                Some(v) => {
                    hits += 1;
                    values.push(v);
                }
                None => values.push(IGNORE),
            }
        }
    }
    if hits == 0 {
        return Err(Error::Coverage(
            "source raster does not overlap the target grid".into(),
        ));
    }
    LabelRaster::new(width, height, values, *target, src.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tile(w: u32, h: u32, px: f64, vals: Vec<f32>) -> RasterTile {
        RasterTile::new(
            w,
            h,
            vec![vals],
            vec!["b".into()],
            f32::NEG_INFINITY,
            GeoTransform::north_up(0.0, 0.0, px, 0),
        )
        .unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let t = tile(3, 2, 30.0, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(resample_nearest(&t, 30.0).unwrap(), t);
    }

    #[test]
    fn constant_fill_on_upsample() {
        let t = tile(1, 1, 100.0, vec![7.5]);
        let out = resample_nearest(&t, 10.0).unwrap();
        assert_eq!((out.width(), out.height()), (10, 10));
        assert!(out.band(0).iter().all(|&v| v == 7.5));
    }

    #[test]
    fn two_by_two_doubles_into_blocks() {
        let t = tile(2, 2, 2.0, vec![1.0, 2.0, 3.0, 4.0]);
        let out = resample_nearest(&t, 1.0).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(out.band(0), expected.as_slice());
    }

    #[test]
    fn rejects_bad_size() {
        let t = tile(1, 1, 1.0, vec![0.0]);
        assert!(resample_nearest(&t, 0.0).is_err());
        assert!(resample_nearest(&t, -2.0).is_err());
    }

    #[test]
    fn label_grid_outside_is_ignore() {
        let src = LabelRaster::new(1, 1, vec![3], GeoTransform::north_up(0.0, 10.0, 10.0, 0), 4)
            .unwrap();
        let target = GeoTransform::north_up(5.0, 10.0, 5.0, 0);
        let out = resample_labels_to_grid(&src, &target, 2, 1).unwrap();
        assert_eq!(out.values(), &[3, -1]);
        let far = GeoTransform::north_up(1e6, 0.0, 5.0, 0);
        assert!(matches!(
            resample_labels_to_grid(&src, &far, 2, 2),
            Err(Error::Coverage(_))
        ));
    }

    proptest! {
        #[test]
        fn introduces_no_new_values(
            w in 1u32..9, h in 1u32..9, target in 0.3f64..4.0,
            vals in proptest::collection::vec(prop_oneof![Just(f32::NEG_INFINITY), -5.0f32..5.0], 64),
        ) {
            let n = (w * h) as usize;
            let t = tile(w, h, 1.0, vals[..n].to_vec());
            let out = resample_nearest(&t, target).unwrap();
            for v in out.band(0) {
                prop_assert!(t.band(0).contains(v));
            }
        }
    }
}
