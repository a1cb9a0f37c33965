//! Evaluation against survey clusters whose published coordinates were
//! randomly displaced for privacy.
//!
//! For each cluster the unperturbed location is imputed by sampling
//! human-settlement (HS) pixels of a prior map, weighted by the displacement
//! density at their distance from the published point. The map under test is
//! read at every draw and the draws are reduced to one class by majority vote.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cohen_kappa, ConfusionMatrix};
use crate::raster::{LabelRaster, IGNORE};
use crate::util::derive_seed;

const EARTH_RADIUS_M: f64 = 6_371_008.8;
const EPSG_WGS84: u32 = 4326;
pub const DEFAULT_DRAWS: usize = 20;

/// Three-class urban/rural map ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HurClass {
    NonHs = 0,
    Rural = 1,
    Urban = 2,
}

impl HurClass {
    pub const COUNT: u8 = 3;

    pub fn from_id(v: i16) -> Option<Self> {
        match v {
            0 => Some(Self::NonHs),
            1 => Some(Self::Rural),
            2 => Some(Self::Urban),
            _ => None,
        }
    }

    pub fn id(self) -> i16 {
        self as i16
    }
}

/// Survey label of a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SettlementLabel {
    #[serde(rename = "urban", alias = "U", alias = "Urban")]
    Urban,
    #[serde(rename = "rural", alias = "R", alias = "Rural")]
    Rural,
}

impl SettlementLabel {
    pub fn as_hur(self) -> HurClass {
        match self {
            Self::Urban => HurClass::Urban,
            Self::Rural => HurClass::Rural,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhsCluster {
    pub id: String,
    /// Published (displaced) coordinate in the map's CRS.
    pub lon: f64,
    pub lat: f64,
    pub label: SettlementLabel,
    pub year: u16,
    pub country: String,
}

pub fn read_clusters_csv(path: impl AsRef<Path>) -> Result<Vec<DhsCluster>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let clusters: Vec<DhsCluster> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(c) = clusters.iter().find(|c| !(c.lon.is_finite() && c.lat.is_finite())) {
        return Err(Error::Data(format!("cluster {} has a non-finite coordinate", c.id)));
    }
    Ok(clusters)
}

/// Collapse an 8-class land cover map to urban / rural / non-settlement.
pub fn hur_from_landcover(map: &LabelRaster, rural: i16, urban: i16) -> Result<LabelRaster> {
    let values = map
        .values()
        .iter()
        .map(|&v| match v {
            IGNORE => IGNORE,
            v if v == rural => HurClass::Rural.id(),
            v if v == urban => HurClass::Urban.id(),
            _ => HurClass::NonHs.id(),
        })
        .collect();
    LabelRaster::new(map.width(), map.height(), values, *map.transform(), HurClass::COUNT)
}

/// Displacement radii in metres. Urban points move up to `urban_rmax`; rural
/// points up to `rural_rmax`, except a `rural_far_fraction` share that moves
/// up to `rural_far_rmax`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationModel {
    pub urban_rmax: f64,
    pub rural_rmax: f64,
    pub rural_far_rmax: f64,
    pub rural_far_fraction: f64,
    pub distance_floor: f64,
}

impl Default for PerturbationModel {
    fn default() -> Self {
        Self {
            urban_rmax: 2000.0,
            rural_rmax: 5000.0,
            rural_far_rmax: 10_000.0,
            rural_far_fraction: 0.01,
            distance_floor: 5.0,
        }
    }
}

impl PerturbationModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.urban_rmax > 0.0
            && self.urban_rmax <= self.rural_rmax
            && self.rural_rmax <= self.rural_far_rmax
            && self.rural_far_rmax.is_finite()
            && (0.0..=1.0).contains(&self.rural_far_fraction)
            && self.distance_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid perturbation model {self:?}")))
        }
    }

    /// Largest displacement possible for `label`.
    pub fn max_radius(&self, label: SettlementLabel) -> f64 {
        match label {
            SettlementLabel::Urban => self.urban_rmax,
            SettlementLabel::Rural if self.rural_far_fraction > 0.0 => self.rural_far_rmax,
            SettlementLabel::Rural => self.rural_rmax,
        }
    }
}

/// Planar density of a displacement of length `d` when the angle is uniform
/// and the radius uniform on `[0, rmax]`.
fn ring_density(d: f64, rmax: f64, floor: f64) -> f64 {
    if d > rmax {
        0.0
    } else {
        1.0 / (2.0 * PI * d.max(floor) * rmax)
    }
}

pub fn displacement_weight(d: f64, label: SettlementLabel, pm: &PerturbationModel) -> f64 {
    let f = pm.distance_floor;
    match label {
        SettlementLabel::Urban => ring_density(d, pm.urban_rmax, f),
        SettlementLabel::Rural => {
            (1.0 - pm.rural_far_fraction) * ring_density(d, pm.rural_rmax, f)
                + pm.rural_far_fraction * ring_density(d, pm.rural_far_rmax, f)
        }
    }
}

/// Metres per map unit along x and y near latitude `lat`.
fn metric_scale(epsg: u32, lat: f64) -> (f64, f64) {
    if epsg == EPSG_WGS84 {
        let m_per_deg = EARTH_RADIUS_M * PI / 180.0;
        (m_per_deg * lat.to_radians().cos(), m_per_deg)
    } else {
        (1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub cluster_id: String,
    /// Pixel-centre coordinates of the draws, in the prior map's CRS.
    pub draws: Vec<(f64, f64)>,
    /// `(col, row)` of each draw in the prior map.
    pub draw_pixels: Vec<(u32, u32)>,
    /// Distance in metres of each draw from the published point.
    pub draw_distances: Vec<f64>,
    pub seed: u64,
}

struct Candidate {
    col: u32,
    row: u32,
    x: f64,
    y: f64,
    dist: f64,
}

fn candidates(c: &DhsCluster, prior: &LabelRaster, radius: f64) -> Vec<Candidate> {
    let t = prior.transform();
    let (sx, sy) = metric_scale(t.epsg, c.lat);
    let (rx, ry) = (radius / sx, radius / sy);
    let corners = [
        t.world_to_pixel(c.lon - rx, c.lat - ry),
        t.world_to_pixel(c.lon + rx, c.lat - ry),
        t.world_to_pixel(c.lon - rx, c.lat + ry),
        t.world_to_pixel(c.lon + rx, c.lat + ry),
    ];
    let (w, h) = (f64::from(prior.width()), f64::from(prior.height()));
    let lo_c = corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let hi_c = corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(w);
    let lo_r = corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let hi_r = corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h);
    let (pc, pr) = t.world_to_pixel(c.lon, c.lat);
    let home = (pc.floor(), pr.floor());

    let mut out = Vec::new();
    let (mut row, end_r, end_c) = (lo_r as u32, hi_r.max(lo_r) as u32, hi_c.max(lo_c) as u32);
    while row < end_r {
        for col in lo_c as u32..end_c {
            let v = prior.get(col, row);
            if v != HurClass::Rural.id() && v != HurClass::Urban.id() {
                continue;
            }
            let (x, y) = t.pixel_to_world(f64::from(col) + 0.5, f64::from(row) + 0.5);
            // the pixel holding the published point counts as distance zero
            let dist = if (f64::from(col), f64::from(row)) == home {
                0.0
            } else {
                ((x - c.lon) * sx).hypot((y - c.lat) * sy)
            };
            if dist <= radius {
                out.push(Candidate { col, row, x, y, dist });
            }
        }
        row += 1;
    }
    out
}

/// Sample `n` plausible true locations of `c` with replacement.
pub fn impute_locations(
    c: &DhsCluster,
    prior: &LabelRaster,
    pm: &PerturbationModel,
    n: usize,
    seed: u64,
) -> Result<ImputationResult> {
    pm.validate()?;
    if n == 0 {
        return Err(Error::Config("need at least one draw".into()));
    }
    let radius = pm.max_radius(c.label);
    let cands = candidates(c, prior, radius);
    let weights: Vec<f64> = cands.iter().map(|k| displacement_weight(k.dist, c.label, pm)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::NoSettlement {
        cluster: c.id.clone(),
        radius_m: radius,
    })?;
    let sub = derive_seed(seed, &format!("impute/{}", c.id));
    let mut rng = ChaCha8Rng::seed_from_u64(sub);
    let mut res = ImputationResult {
        cluster_id: c.id.clone(),
        draws: Vec::with_capacity(n),
        draw_pixels: Vec::with_capacity(n),
        draw_distances: Vec::with_capacity(n),
        seed: sub,
    };
    for _ in 0..n {
        let k = &cands[dist.sample(&mut rng)];
        res.draws.push((k.x, k.y));
        res.draw_pixels.push((k.col, k.row));
        res.draw_distances.push(k.dist);
    }
    Ok(res)
}

/// Majority class of the map under test over the draws; ties are broken by a
/// seeded random choice among the tied classes.
pub fn classify_draws(map: &LabelRaster, result: &ImputationResult, seed: u64) -> Result<HurClass> {
    let mut counts = [0usize; 3];
    for &(x, y) in &result.draws {
        let v = map.sample_world(x, y).ok_or_else(|| {
            Error::Coverage(format!("draw ({x}, {y}) of cluster {} is outside the map", result.cluster_id))
        })?;
        let class = HurClass::from_id(v).ok_or_else(|| {
            Error::Data(format!("map value {v} at ({x}, {y}) is not an urban/rural/non-settlement id"))
        })?;
        counts[class as usize] += 1;
    }
    let top = *counts.iter().max().expect("three classes");
    let tied: Vec<HurClass> = [HurClass::NonHs, HurClass::Rural, HurClass::Urban]
        .into_iter()
        .filter(|c| counts[*c as usize] == top)
        .collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("vote/{}", result.cluster_id)));
    Ok(*tied.choose(&mut rng).expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementScore {
    pub n: usize,
    pub accuracy: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapScore {
    pub overall: AgreementScore,
    /// Rows: survey label, columns: voted class (non-settlement, rural, urban).
    pub confusion: Vec<Vec<u64>>,
    pub per_country: BTreeMap<String, AgreementScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhsReport {
    pub clusters_evaluated: usize,
    /// Clusters with no settlement pixel in reach of their published point.
    pub excluded: Vec<String>,
    pub draws_per_cluster: usize,
    pub seed: u64,
    pub map_a: MapScore,
    pub map_b: Option<MapScore>,
}

fn score(pairs: &[(HurClass, HurClass)]) -> Result<(AgreementScore, ConfusionMatrix)> {
    let mut cm = ConfusionMatrix::zeros(usize::from(HurClass::COUNT));
    for &(truth, voted) in pairs {
        cm.add(truth as usize, voted as usize, 1);
    }
    let hits = pairs.iter().filter(|(t, v)| t == v).count();
    Ok((
        AgreementScore {
            n: pairs.len(),
            accuracy: hits as f64 / pairs.len() as f64,
            kappa: cohen_kappa(&cm)?,
        },
        cm,
    ))
}

fn score_map(
    clusters: &[&DhsCluster],
    draws: &[ImputationResult],
    map: &LabelRaster,
    seed: u64,
) -> Result<MapScore> {
    let voted: Vec<HurClass> = draws
        .par_iter()
        .map(|d| classify_draws(map, d, seed))
        .collect::<Result<_>>()?;
    let pairs: Vec<(HurClass, HurClass)> =
        clusters.iter().zip(&voted).map(|(c, v)| (c.label.as_hur(), *v)).collect();
    let (overall, cm) = score(&pairs)?;
    let mut by_country: BTreeMap<&str, Vec<(HurClass, HurClass)>> = BTreeMap::new();
    for (c, p) in clusters.iter().zip(&pairs) {
        by_country.entry(c.country.as_str()).or_default().push(*p);
    }
    let per_country = by_country
        .into_iter()
        .map(|(k, v)| Ok((k.to_string(), score(&v)?.0)))
        .collect::<Result<_>>()?;
    Ok(MapScore {
        overall,
        confusion: cm.rows(),
        per_country,
    })
}

/// Score one or two maps on the same imputed draws.
pub fn evaluate_maps(
    clusters: &[DhsCluster],
    map_a: &LabelRaster,
    map_b: Option<&LabelRaster>,
    prior: &LabelRaster,
    pm: &PerturbationModel,
    draws_per_cluster: usize,
    seed: u64,
) -> Result<DhsReport> {
    pm.validate()?;
    let imputed: Vec<Result<ImputationResult>> = clusters
        .par_iter()
        .map(|c| impute_locations(c, prior, pm, draws_per_cluster, seed))
        .collect();
    let mut kept = Vec::new();
    let mut draws = Vec::new();
    let mut excluded = Vec::new();
    for (c, r) in clusters.iter().zip(imputed) {
        match r {
            Ok(d) => {
                kept.push(c);
                draws.push(d);
            }
            Err(Error::NoSettlement { cluster, .. }) => excluded.push(cluster),
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "all {} clusters were excluded for lack of settlement pixels",
            clusters.len()
        )));
    }
    let map_a = score_map(&kept, &draws, map_a, derive_seed(seed, "map_a"))?;
    let map_b = map_b
        .map(|m| score_map(&kept, &draws, m, derive_seed(seed, "map_b")))
        .transpose()?;
    Ok(DhsReport {
        clusters_evaluated: kept.len(),
        excluded,
        draws_per_cluster,
        seed,
        map_a,
        map_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    /// `w x h` map of 10 m pixels with origin (0, h*10), north up.
    fn map(w: u32, h: u32, values: Vec<i16>) -> LabelRaster {
        let t = GeoTransform::north_up(0.0, f64::from(h) * 10.0, 10.0, 3857);
        LabelRaster::new(w, h, values, t, 3).unwrap()
    }

    fn cluster(id: &str, x: f64, y: f64, label: SettlementLabel) -> DhsCluster {
        DhsCluster {
            id: id.into(),
            lon: x,
            lat: y,
            label,
            year: 2019,
            country: "AAA".into(),
        }
    }

    #[test]
    fn weight_support_ratio_and_floor() {
        let pm = PerturbationModel::default();
        assert_eq!(displacement_weight(10_001.0, SettlementLabel::Rural, &pm), 0.0);
        assert_eq!(displacement_weight(2_001.0, SettlementLabel::Urban, &pm), 0.0);
        let half = displacement_weight(1000.0, SettlementLabel::Urban, &pm);
        let full = displacement_weight(2000.0, SettlementLabel::Urban, &pm);
        assert!((half / full - 2.0).abs() < 1e-12);
        assert_eq!(
            displacement_weight(1.0, SettlementLabel::Urban, &pm),
            displacement_weight(5.0, SettlementLabel::Urban, &pm)
        );
        // between rural radii only the far component remains
        let far = displacement_weight(6000.0, SettlementLabel::Rural, &pm);
        assert!((far - 0.01 / (2.0 * PI * 6000.0 * 10_000.0)).abs() < 1e-20);
    }

    #[test]
    fn single_candidate_takes_every_draw() {
        let mut v = vec![0i16; 100];
        v[3 * 10 + 7] = 2;
        let m = map(10, 10, v);
        let c = cluster("c1", 25.0, 55.0, SettlementLabel::Urban);
        let r = impute_locations(&c, &m, &PerturbationModel::default(), 20, 1).unwrap();
        assert!(r.draw_pixels.iter().all(|&p| p == (7, 3)));
        assert_eq!(r.draws.len(), 20);
    }

    #[test]
    fn tiny_radius_collapses_to_home_pixel() {
        let m = map(10, 10, vec![1; 100]);
        let pm = PerturbationModel {
            urban_rmax: 1e-6,
            ..PerturbationModel::default()
        };
        let c = cluster("c", 43.0, 61.0, SettlementLabel::Urban);
        let r = impute_locations(&c, &m, &pm, 20, 9).unwrap();
        assert!(r.draw_pixels.iter().all(|&p| p == (4, 3)));
    }

    #[test]
    fn no_settlement_is_reported() {
        let m = map(10, 10, vec![0; 100]);
        let c = cluster("lonely", 50.0, 50.0, SettlementLabel::Rural);
        assert!(matches!(
            impute_locations(&c, &m, &PerturbationModel::default(), 20, 0),
            Err(Error::NoSettlement { .. })
        ));
        let err = evaluate_maps(&[c], &m, None, &m, &PerturbationModel::default(), 20, 0);
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn draws_stay_on_settlements_within_radius() {
        let values: Vec<i16> = (0..400).map(|i| [0, 1, 2, 0, 0][i % 5]).collect();
        let m = map(20, 20, values);
        let pm = PerturbationModel {
            urban_rmax: 50.0,
            rural_rmax: 60.0,
            rural_far_rmax: 80.0,
            ..PerturbationModel::default()
        };
        for (i, label) in [SettlementLabel::Urban, SettlementLabel::Rural].into_iter().enumerate() {
            let c = cluster(&format!("k{i}"), 101.0, 99.0, label);
            let r = impute_locations(&c, &m, &pm, 200, 4).unwrap();
            for ((&(col, row), &d), &(x, y)) in r.draw_pixels.iter().zip(&r.draw_distances).zip(&r.draws) {
                assert!(m.get(col, row) > 0);
                assert!(d <= pm.max_radius(label));
                assert_eq!(m.sample_world(x, y), Some(m.get(col, row)));
            }
            let again = impute_locations(&c, &m, &pm, 200, 4).unwrap();
            assert_eq!(r, again);
        }
    }

    #[test]
    fn majority_vote_and_ties() {
        let m = map(2, 1, vec![2, 1]);
        let urban = (5.0, 5.0);
        let rural = (15.0, 5.0);
        let mk = |u: usize, r: usize| ImputationResult {
            cluster_id: "v".into(),
            draws: [vec![urban; u], vec![rural; r]].concat(),
            draw_pixels: vec![],
            draw_distances: vec![],
            seed: 0,
        };
        assert_eq!(classify_draws(&m, &mk(12, 8), 0).unwrap(), HurClass::Urban);
        let tie = mk(10, 10);
        let first = classify_draws(&m, &tie, 3).unwrap();
        assert!(matches!(first, HurClass::Urban | HurClass::Rural));
        assert_eq!(classify_draws(&m, &tie, 3).unwrap(), first);
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..32 {
            seen.insert(classify_draws(&m, &tie, s).unwrap());
        }
        assert_eq!(seen.len(), 2);

        let none = map(1, 1, vec![0]);
        let all_non = ImputationResult {
            draws: vec![(5.0, 5.0); 20],
            ..mk(0, 0)
        };
        assert_eq!(classify_draws(&none, &all_non, 0).unwrap(), HurClass::NonHs);
        let outside = ImputationResult {
            draws: vec![(500.0, 5.0)],
            ..mk(0, 0)
        };
        assert!(matches!(classify_draws(&none, &outside, 0), Err(Error::Coverage(_))));
    }

    #[test]
    fn paired_evaluation_is_independent_of_map_b() {
        let values: Vec<i16> = (0..400).map(|i| [1, 2][(i / 7) % 2]).collect();
        let prior = map(20, 20, values);
        let clusters: Vec<DhsCluster> = (0..30)
            .map(|i| {
                let l = if i % 2 == 0 { SettlementLabel::Urban } else { SettlementLabel::Rural };
                cluster(&format!("c{i}"), 10.0 + 6.0 * f64::from(i), 100.0, l)
            })
            .collect();
        let pm = PerturbationModel {
            urban_rmax: 30.0,
            rural_rmax: 40.0,
            rural_far_rmax: 60.0,
            ..PerturbationModel::default()
        };
        let b1 = map(20, 20, vec![0; 400]);
        let b2 = map(20, 20, vec![2; 400]);
        let r1 = evaluate_maps(&clusters, &prior, Some(&b1), &prior, &pm, 20, 5).unwrap();
        let r2 = evaluate_maps(&clusters, &prior, Some(&b2), &prior, &pm, 20, 5).unwrap();
        assert_eq!(r1.map_a, r2.map_a);
        assert_ne!(r1.map_b, r2.map_b);
        assert_eq!(r1.map_b.unwrap().overall.accuracy, 0.0);
    }

    #[test]
    fn landcover_collapse() {
        let lc = LabelRaster::new(4, 1, vec![6, 7, 3, -1], GeoTransform::default(), 8).unwrap();
        let h = hur_from_landcover(&lc, 6, 7).unwrap();
        assert_eq!(h.values(), &[1, 2, 0, -1]);
    }

    #[test]
    fn label_aliases_parse() {
        let csv = "id,lon,lat,label,year,country\na,1,2,U,2018,KEN\nb,3,4,rural,2019,KEN\n";
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        let v: Vec<DhsCluster> = rdr.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(v[0].label, SettlementLabel::Urban);
        assert_eq!(v[1].label, SettlementLabel::Rural);
    }
}
