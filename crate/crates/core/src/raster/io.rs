//! `HURT` tile file format.
//!
//! Little-endian layout:
//!
//! | field        | type                              |
//! |--------------|-----------------------------------|
//! | magic        | `b"HURT"`                         |
//! | version      | u16 (= 1)                         |
//! | kind         | u8 (0 = f32 bands, 1 = i16 labels)|
//! | band_count   | u8                                |
//! | width        | u32                               |
//! | height       | u32                               |
//! | nodata       | f32                               |
//! | geotransform | 6 × f64, GDAL order               |
//! | epsg         | u32                               |
//! | band names   | per band: u16 length + UTF-8      |
//! | payload      | band-major raw samples            |
//!
//! Label tiles always have one band. Their band name records the class
//! count as `classes:K`, and their nodata field holds the ignore id.

use std::fs;
use std::path::Path;

use super::{GeoTransform, LabelRaster, RasterTile, IGNORE};
use crate::error::{Error, Result};
use crate::util::write_atomic;

pub const HURT_MAGIC: &[u8; 4] = b"HURT";
pub const HURT_VERSION: u16 = 1;
/// Bytes before the band-name block.
pub const HEADER_FIXED_LEN: usize = 4 + 2 + 1 + 1 + 4 + 4 + 4 + 6 * 8 + 4;

const KIND_BANDS: u8 = 0;
const KIND_LABELS: u8 = 1;

/// Either kind of tile a `HURT` file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTile {
    Bands(RasterTile),
    Labels(LabelRaster),
}

impl AnyTile {
    pub fn into_bands(self) -> Result<RasterTile> {
        match self {
            AnyTile::Bands(t) => Ok(t),
            AnyTile::Labels(_) => Err(Error::Format("expected a band tile, found labels".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelRaster> {
        match self {
            AnyTile::Labels(l) => Ok(l),
            AnyTile::Bands(_) => Err(Error::Format("expected a label tile, found bands".into())),
        }
    }
}

impl From<RasterTile> for AnyTile {
    fn from(t: RasterTile) -> Self {
        AnyTile::Bands(t)
    }
}

impl From<LabelRaster> for AnyTile {
    fn from(l: LabelRaster) -> Self {
        AnyTile::Labels(l)
    }
}

fn put_header(
    out: &mut Vec<u8>,
    kind: u8,
    band_count: u8,
    width: u32,
    height: u32,
    nodata: f32,
    gt: &GeoTransform,
) {
    out.extend_from_slice(HURT_MAGIC);
    out.extend_from_slice(&HURT_VERSION.to_le_bytes());
    out.push(kind);
    out.push(band_count);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&nodata.to_le_bytes());
    for v in [
        gt.origin_x,
        gt.pixel_width,
        gt.row_rotation,
        gt.origin_y,
        gt.col_rotation,
        gt.pixel_height,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&gt.epsg.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Format(format!("band name of {} bytes is too long", name.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

pub fn encode(tile: &AnyTile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match tile {
        AnyTile::Bands(t) => {
            out.reserve(HEADER_FIXED_LEN + t.band_count() * t.len() * 4 + 64);
            put_header(
                &mut out,
                KIND_BANDS,
                t.band_count() as u8,
                t.width(),
                t.height(),
                t.nodata(),
                t.transform(),
            );
            for name in t.band_names() {
                put_name(&mut out, name)?;
            }
            for band in t.bands() {
                for v in band {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        AnyTile::Labels(l) => {
            out.reserve(HEADER_FIXED_LEN + l.len() * 2 + 16);
            put_header(
                &mut out,
                KIND_LABELS,
                1,
                l.width(),
                l.height(),
                f32::from(IGNORE),
                l.transform(),
            );
            put_name(&mut out, &format!("classes:{}", l.num_classes()))?;
            for v in l.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corruption(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<AnyTile> {
    if buf.len() < 4 || &buf[..4] != HURT_MAGIC {
        let got = String::from_utf8_lossy(&buf[..buf.len().min(4)]).into_owned();
        return Err(Error::Format(format!("bad magic {got:?}, expected \"HURT\"")));
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u16("version")?;
    if version != HURT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: HURT_VERSION,
        });
    }
    let kind = r.u8("kind")?;
    let band_count = r.u8("band count")? as usize;
    let width = r.u32("width")?;
    let height = r.u32("height")?;
    let nodata = r.f32("nodata")?;
    let origin_x = r.f64("geotransform")?;
    let pixel_width = r.f64("geotransform")?;
    let row_rotation = r.f64("geotransform")?;
    let origin_y = r.f64("geotransform")?;
    let col_rotation = r.f64("geotransform")?;
    let pixel_height = r.f64("geotransform")?;
    let epsg = r.u32("epsg")?;
    let transform = GeoTransform {
        origin_x,
        origin_y,
        pixel_width,
        pixel_height,
        row_rotation,
        col_rotation,
        epsg,
    };
    let mut names = Vec::with_capacity(band_count);
    for _ in 0..band_count {
        let len = r.u16("band name length")? as usize;
        let bytes = r.take(len, "band name")?;
        let name = String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format("band name is not valid UTF-8".into()))?;
        names.push(name);
    }
    let n = width as usize * height as usize;
    let tile = match kind {
        KIND_BANDS => {
            let mut bands = Vec::with_capacity(band_count);
            for _ in 0..band_count {
                let raw = r.take(n * 4, "band payload")?;
                bands.push(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                );
            }
            AnyTile::Bands(
                RasterTile::new(width, height, bands, names, nodata, transform)
                    .map_err(|e| Error::Corruption(e.to_string()))?,
            )
        }
        KIND_LABELS => {
            if band_count != 1 {
                return Err(Error::Format(format!(
                    "label tiles have one band, header says {band_count}"
                )));
            }
            let raw = r.take(n * 2, "label payload")?;
            let values: Vec<i16> = raw
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let num_classes = names[0]
                .strip_prefix("classes:")
                .and_then(|k| k.parse::<u8>().ok())
                .unwrap_or_else(|| {
                    let max = values.iter().copied().max().unwrap_or(0).max(0);
                    u8::try_from(max + 1).unwrap_or(u8::MAX)
                });
            AnyTile::Labels(
                LabelRaster::new(width, height, values, transform, num_classes)
                    .map_err(|e| Error::Corruption(e.to_string()))?,
            )
        }
        other => return Err(Error::Format(format!("unknown tile kind {other}"))),
    };
    if r.pos != buf.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after payload",
            buf.len() - r.pos
        )));
    }
    Ok(tile)
}

pub fn read_tile(path: impl AsRef<Path>) -> Result<AnyTile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Atomically write a tile (temp file + rename).
pub fn write_tile(tile: &AnyTile, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(tile)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_pixel() -> RasterTile {
        RasterTile::new(
            1,
            1,
            vec![vec![0.5]],
            vec!["b".into()],
            f32::NEG_INFINITY,
            GeoTransform::north_up(10.0, 20.0, 10.0, 32633),
        )
        .unwrap()
    }

    #[test]
    fn fixed_header_is_72_bytes() {
        assert_eq!(HEADER_FIXED_LEN, 72);
    }

    #[test]
    fn single_pixel_file_size() {
        // 72 fixed + (2 + 1) for the name "b" + 4 payload bytes
        let bytes = encode(&one_pixel().into()).unwrap();
        assert_eq!(bytes.len(), 72 + 3 + 4);
        assert_eq!(&bytes[bytes.len() - 4..], &0.5f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&one_pixel().into()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&one_pixel().into()).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&one_pixel().into()).unwrap();
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.hurt");
        let t: AnyTile = one_pixel().into();
        write_tile(&t, &p).unwrap();
        assert_eq!(read_tile(&p).unwrap(), t);
        let l: AnyTile = LabelRaster::new(2, 1, vec![-1, 7], GeoTransform::default(), 8)
            .unwrap()
            .into();
        write_tile(&l, &p).unwrap();
        assert_eq!(read_tile(&p).unwrap(), l);
    }

    fn arb_tile() -> impl Strategy<Value = RasterTile> {
        (1u32..6, 1u32..6, 1usize..4).prop_flat_map(|(w, h, nb)| {
            let n = (w * h) as usize;
            (
                proptest::collection::vec(
                    proptest::collection::vec(any::<u32>().prop_map(f32::from_bits), n),
                    nb,
                ),
                proptest::collection::vec("[a-zA-Z0-9_ ]{0,12}", nb),
                any::<u32>().prop_map(f32::from_bits),
                (-1e6f64..1e6, -1e6f64..1e6, 0.1f64..100.0, any::<u32>()),
            )
                .prop_map(move |(bands, names, nodata, (ox, oy, px, epsg))| {
                    RasterTile::new(
                        w,
                        h,
                        bands,
                        names,
                        nodata,
                        GeoTransform::north_up(ox, oy, px, epsg),
                    )
                    .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(t in arb_tile()) {
            let bytes = encode(&t.clone().into()).unwrap();
            let back = decode(&bytes).unwrap().into_bands().unwrap();
            // compare bit patterns so NaN payloads count as equal
            prop_assert_eq!(back.nodata().to_bits(), t.nodata().to_bits());
            for (a, b) in back.bands().iter().zip(t.bands()) {
                let a: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(back.band_names(), t.band_names());
            prop_assert_eq!(back.transform(), t.transform());
            prop_assert_eq!(encode(&back.into()).unwrap(), bytes);
        }

        #[test]
        fn label_round_trip(w in 1u32..8, h in 1u32..8, k in 1u8..20, seed in any::<u64>()) {
            let n = (w * h) as usize;
            let values: Vec<i16> = (0..n)
                .map(|i| ((crate::util::splitmix64(seed ^ i as u64) % (u64::from(k) + 1)) as i16) - 1)
                .collect();
            let l = LabelRaster::new(w, h, values, GeoTransform::default(), k).unwrap();
            let back = decode(&encode(&l.clone().into()).unwrap()).unwrap();
            prop_assert_eq!(back, AnyTile::Labels(l));
        }
    }
}
