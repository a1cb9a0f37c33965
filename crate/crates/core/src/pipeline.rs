//! Config-driven end-to-end runs over a synthetic continent.
//!
//! Stages run in order: synth, composite, fuse, folds, train, stitch,
//! evaluate. Every output is written atomically beneath `output_dir` and
//! listed with its SHA-256 digest in `manifest.json`, so two runs of the same
//! config can be compared byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confusion, per_country_report, write_country_csv, CountryScore};
use crate::model::{
    compute_weights_present, extract_features, predict, predict_tile, train_baseline, BaselineParams,
    ClassWeights, FeatureConfig, Features, Hyperparams, WeightingStrategy,
};
use crate::preprocess::{
    class_counts, distribution_from_counts, esri_codes_from_targets, fuse_builtarea, median_composite,
    remap_esri, ClassMap, ObservationStack, SmodMerge, NUM_TARGET_CLASSES,
};
use crate::raster::{
    gen_synthetic_scene, make_grid, normalize_bands, read_tile, write_tile, AnyTile, BBox, BandRange,
    ClassBlob, LabelRaster, RasterTile, RectPartition, SyntheticSceneSpec, TileGrid, TileSpec, BAND_NAMES,
    IGNORE, TILE_PIXELS, TILE_SIZE_M,
};
use crate::spatialcv::{assign_folds, fold_configs, read_countries_csv, tiles_for_split, CountryRecord, FoldAssignment, FoldConfig};
use crate::stitch::{smooth_predict, TilingScheme};
use crate::util::{derive_seed, sha256_file, sha256_hex, write_atomic};

pub const STAGES: [&str; 7] = ["synth", "composite", "fuse", "folds", "train", "stitch", "evaluate"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinentConfig {
    /// Tiles per country along x.
    pub tiles_x: usize,
    /// Tiles per country along y.
    pub tiles_y: usize,
    /// Pixels per tile side; tiles always span 10 km.
    pub tile_pixels: u32,
    pub epsg: u32,
}

impl Default for ContinentConfig {
    fn default() -> Self {
        Self {
            tiles_x: 2,
            tiles_y: 2,
            tile_pixels: TILE_PIXELS,
            epsg: 3857,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub num_years: usize,
    pub cloud_fraction: f64,
    pub num_regions: usize,
    #[serde(default)]
    pub class_layout: Option<Vec<ClassBlob>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_years: 3,
            cloud_fraction: 0.1,
            num_regions: 64,
            class_layout: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSettings {
    pub k: usize,
}

/// Every random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub synth: u64,
    pub sample: u64,
    pub train: u64,
}

fn default_train_pixels() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// `code,name,area_km2` table of the countries to lay out.
    pub countries_csv: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub continent: ContinentConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    /// Per-band normalisation ranges; defaults suit the synthetic bands.
    #[serde(default)]
    pub band_ranges: Option<Vec<BandRange>>,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub tiling: TilingScheme,
    pub weighting: WeightingStrategy,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    pub folds: FoldSettings,
    /// Labelled pixels sampled per tile for training and validation.
    #[serde(default = "default_train_pixels")]
    pub train_pixels_per_tile: usize,
    pub seeds: Seeds,
}

impl PipelineConfig {
    /// Parse a JSON config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.countries_csv, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn class_layout(&self) -> Vec<ClassBlob> {
        self.scene
            .class_layout
            .clone()
            .unwrap_or_else(crate::raster::default_class_layout)
    }

    pub fn band_ranges(&self) -> Vec<BandRange> {
        self.band_ranges.clone().unwrap_or_else(|| {
            let nb = self.class_layout().first().map_or(0, |b| b.band_mean.len());
            default_band_ranges(nb)
        })
    }

    /// Check everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<()> {
        if !self.countries_csv.is_file() {
            return Err(Error::Config(format!(
                "input {} does not exist",
                self.countries_csv.display()
            )));
        }
        let countries = read_countries_csv(&self.countries_csv)?;
        assign_folds(&countries, self.folds.k)?;
        fold_configs(self.folds.k)?;
        self.features.validate()?;
        self.tiling.validate()?;
        let c = &self.continent;
        if c.tiles_x == 0 || c.tiles_y == 0 || c.tile_pixels == 0 {
            return Err(Error::Config("continent needs at least one pixel per tile".into()));
        }
        let hp = &self.hyperparams;
        if hp.epochs == 0 || hp.batch_size == 0 || !(hp.learning_rate > 0.0) {
            return Err(Error::Config(format!("invalid hyperparameters {hp:?}")));
        }
        if self.train_pixels_per_tile == 0 {
            return Err(Error::Config("train_pixels_per_tile must be positive".into()));
        }
        let probe = self.scene_spec(&TileSpec {
            tile_id: "probe".into(),
            country: String::new(),
            bbox: BBox::new(0.0, 0.0, TILE_SIZE_M, TILE_SIZE_M),
            width_px: c.tile_pixels,
            height_px: c.tile_pixels,
        });
        probe.validate()?;
        let nb = probe.class_layout[0].band_mean.len();
        if self.band_ranges().len() != nb {
            return Err(Error::Config(format!(
                "{} band ranges for {nb} bands",
                self.band_ranges().len()
            )));
        }
        Ok(())
    }

    fn scene_spec(&self, tile: &TileSpec) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            width: tile.width_px,
            height: tile.height_px,
            num_years: self.scene.num_years,
            class_layout: self.class_layout(),
            cloud_fraction: self.scene.cloud_fraction,
            seed: derive_seed(self.seeds.synth, &tile.tile_id),
            num_regions: self.scene.num_regions,
            pixel_size: tile.bbox.width() / f64::from(tile.width_px),
            origin_x: tile.bbox.min_x,
            origin_y: tile.bbox.max_y,
            epsg: self.continent.epsg,
        }
    }
}

/// Reflectance bands span `0..10000`; a trailing seventh band (nightlights)
/// spans `0..100`.
pub fn default_band_ranges(bands: usize) -> Vec<BandRange> {
    (0..bands)
        .map(|b| {
            if bands == BAND_NAMES.len() && b == bands - 1 {
                BandRange::new(0.0, 100.0)
            } else {
                BandRange::new(0.0, 10_000.0)
            }
        })
        .collect()
}

/// Median-composite a year stack and scale it to `[0, 1]`.
pub fn composite_years(years: Vec<RasterTile>, ranges: &[BandRange]) -> Result<RasterTile> {
    let stack = ObservationStack::from_observations(years)?;
    normalize_bands(&median_composite(&stack)?, ranges)
}

/// Raw ESRI codes plus SMOD → final target labels.
pub fn fuse_labels(esri: &LabelRaster, smod: &LabelRaster, cm: &ClassMap, merge: &SmodMerge) -> Result<LabelRaster> {
    fuse_builtarea(&remap_esri(esri, cm)?, smod, merge)
}

/// Features and labels of up to `n` labelled pixels of one tile, drawn
/// without replacement.
pub fn sample_tile(
    composite: &RasterTile,
    labels: &LabelRaster,
    cfg: &FeatureConfig,
    n: usize,
    seed: u64,
) -> Result<(Features, Vec<i16>)> {
    if composite.width() != labels.width() || composite.height() != labels.height() {
        return Err(Error::Shape("composite and labels differ in size".into()));
    }
    let feats = extract_features(composite, cfg)?;
    let labelled: Vec<usize> = (0..labels.len()).filter(|&i| labels.values()[i] != IGNORE).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick: Vec<usize> = sample(&mut rng, labelled.len(), n.min(labelled.len()))
        .into_iter()
        .map(|j| labelled[j])
        .collect();
    pick.sort_unstable();
    let y = pick.iter().map(|&i| labels.values()[i]).collect();
    Ok((feats.select(&pick), y))
}

/// Share of `labels` the model gets right on `features`.
pub fn sample_accuracy(params: &BaselineParams, features: &Features, labels: &[i16]) -> Result<f64> {
    let logits = predict(params, features)?;
    let k = params.num_classes;
    let mut hits = 0usize;
    let mut n = 0usize;
    for (z, &t) in logits.chunks(k).zip(labels) {
        if t == IGNORE {
            continue;
        }
        let best = (0..k).fold(0, |b, c| if z[c] > z[b] { c } else { b });
        hits += usize::from(best as i16 == t);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no labelled samples to score".into()));
    }
    Ok(hits as f64 / n as f64)
}

/// Stitched class map of `composite` under `params`.
pub fn predict_map(params: &BaselineParams, composite: &RasterTile, scheme: &TilingScheme) -> Result<LabelRaster> {
    params.validate()?;
    smooth_predict(|w| predict_tile(params, w), composite, scheme)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Output path relative to the output dir → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// All output digests, keyed by stage then path.
    pub fn digests(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.stages.iter().map(|s| (s.name.clone(), s.outputs.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: String,
    pub train: Vec<usize>,
    pub validation: usize,
    pub test: usize,
    pub params_file: String,
    pub class_weights: ClassWeights,
    pub train_samples: usize,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldsFile {
    pub assignment: FoldAssignment,
    pub configs: Vec<FoldConfig>,
    pub configs_text: String,
}

/// Which model (by test fold) produced each tile's map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapIndex {
    pub tiles: BTreeMap<String, usize>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    countries: Vec<CountryRecord>,
    grid: TileGrid,
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T, outputs: &mut Vec<String>) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        write_atomic(&self.path(rel), &bytes)?;
        outputs.push(rel.to_string());
        Ok(())
    }

    fn write_tile(&self, rel: &str, tile: AnyTile, outputs: &mut Vec<String>) -> Result<()> {
        write_tile(&tile, self.path(rel))?;
        outputs.push(rel.to_string());
        Ok(())
    }

    fn read_bands(&self, rel: &str) -> Result<RasterTile> {
        read_tile(self.path(rel))?.into_bands()
    }

    fn read_labels(&self, rel: &str) -> Result<LabelRaster> {
        read_tile(self.path(rel))?.into_labels()
    }

    fn stage_synth(&self, outputs: &mut Vec<String>) -> Result<()> {
        self.write_json("grid.json", &self.grid, outputs)?;
        for tile in &self.grid.tiles {
            log::info!("synth {}", tile.tile_id);
            let scene = gen_synthetic_scene(&self.cfg.scene_spec(tile))?;
            let id = &tile.tile_id;
            for (y, year) in scene.years.into_iter().enumerate() {
                self.write_tile(&format!("synth/{id}/year{y}.hurt"), year.into(), outputs)?;
            }
            self.write_tile(&format!("synth/{id}/esri.hurt"), esri_codes_from_targets(&scene.truth)?.into(), outputs)?;
            self.write_tile(&format!("synth/{id}/smod.hurt"), scene.smod.into(), outputs)?;
            self.write_tile(&format!("synth/{id}/truth.hurt"), scene.truth.into(), outputs)?;
        }
        Ok(())
    }

    fn stage_composite(&self, outputs: &mut Vec<String>) -> Result<()> {
        let ranges = self.cfg.band_ranges();
        for tile in &self.grid.tiles {
            log::info!("composite {}", tile.tile_id);
            let years = (0..self.cfg.scene.num_years)
                .map(|y| self.read_bands(&format!("synth/{}/year{y}.hurt", tile.tile_id)))
                .collect::<Result<Vec<_>>>()?;
            let comp = composite_years(years, &ranges)?;
            self.write_tile(&format!("composite/{}.hurt", tile.tile_id), comp.into(), outputs)?;
        }
        Ok(())
    }

    fn stage_fuse(&self, outputs: &mut Vec<String>) -> Result<()> {
        let (cm, merge) = (ClassMap::default(), SmodMerge::default());
        for tile in &self.grid.tiles {
            let id = &tile.tile_id;
            let esri = self.read_labels(&format!("synth/{id}/esri.hurt"))?;
            let smod = self.read_labels(&format!("synth/{id}/smod.hurt"))?;
            let labels = fuse_labels(&esri, &smod, &cm, &merge)?;
            self.write_tile(&format!("labels/{id}.hurt"), labels.into(), outputs)?;
        }
        Ok(())
    }

    fn folds(&self) -> Result<(FoldAssignment, Vec<FoldConfig>)> {
        Ok((assign_folds(&self.countries, self.cfg.folds.k)?, fold_configs(self.cfg.folds.k)?))
    }

    fn stage_folds(&self, outputs: &mut Vec<String>) -> Result<()> {
        let (assignment, configs) = self.folds()?;
        let configs_text = configs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        let file = FoldsFile {
            assignment,
            configs,
            configs_text,
        };
        self.write_json("folds.json", &file, outputs)
    }

    fn stage_train(&self, outputs: &mut Vec<String>) -> Result<()> {
        let (fa, configs) = self.folds()?;
        let k = usize::from(NUM_TARGET_CLASSES);
        // one pixel sample and one class histogram per tile, shared by all rotations
        let mut samples: BTreeMap<String, (Features, Vec<i16>)> = BTreeMap::new();
        let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for tile in &self.grid.tiles {
            let id = &tile.tile_id;
            let comp = self.read_bands(&format!("composite/{id}.hurt"))?;
            let labels = self.read_labels(&format!("labels/{id}.hurt"))?;
            counts.insert(id.clone(), class_counts(&labels, k)?);
            let seed = derive_seed(self.cfg.seeds.sample, id);
            samples.insert(
                id.clone(),
                sample_tile(&comp, &labels, &self.cfg.features, self.cfg.train_pixels_per_tile, seed)?,
            );
        }
        let gather = |tiles: &[TileSpec]| -> Result<(Features, Vec<i16>)> {
            let dim = samples.values().next().map_or(0, |s| s.0.dim);
            let mut f = Features::empty(dim, self.cfg.features);
            let mut y = Vec::new();
            for t in tiles {
                let (tf, ty) = &samples[&t.tile_id];
                f.extend(tf)?;
                y.extend_from_slice(ty);
            }
            Ok((f, y))
        };

        let mut index = Vec::new();
        for fc in &configs {
            let split = tiles_for_split(&self.grid, &fa, fc)?;
            if split.train.is_empty() {
                return Err(Error::Coverage(format!("configuration {fc} has no training tiles")));
            }
            let mut total = vec![0u64; k];
            for t in &split.train {
                for (a, b) in total.iter_mut().zip(&counts[&t.tile_id]) {
                    *a += b;
                }
            }
            let weights = compute_weights_present(&distribution_from_counts(&total)?, self.cfg.weighting)?;
            let (x, y) = gather(&split.train)?;
            log::info!("train {fc}: {} samples", x.n);
            let seed = derive_seed(self.cfg.seeds.train, &format!("fold{}", fc.test));
            let params = train_baseline(&x, &y, &weights, &self.cfg.hyperparams, seed)?;
            let validation_accuracy = if split.validation.is_empty() {
                f64::NAN
            } else {
                let (vx, vy) = gather(&split.validation)?;
                sample_accuracy(&params, &vx, &vy)?
            };
            let params_file = format!("models/test_fold{}.json", fc.test);
            self.write_json(&params_file, &params, outputs)?;
            index.push(TrainedModel {
                config: fc.to_string(),
                train: fc.train.clone(),
                validation: fc.validation,
                test: fc.test,
                params_file,
                class_weights: weights,
                train_samples: x.n,
                validation_accuracy,
            });
        }
        self.write_json("models/index.json", &index, outputs)
    }

    fn stage_stitch(&self, outputs: &mut Vec<String>) -> Result<()> {
        let (fa, _) = self.folds()?;
        let index: Vec<TrainedModel> = serde_json::from_slice(
            &fs::read(self.path("models/index.json")).map_err(|e| Error::io(self.path("models/index.json"), e))?,
        )?;
        let mut models = BTreeMap::new();
        for m in &index {
            let path = self.path(&m.params_file);
            let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let params: BaselineParams = serde_json::from_slice(&text)?;
            models.insert(m.test, params);
        }
        let mut map_index = MapIndex {
            tiles: BTreeMap::new(),
        };
        for tile in &self.grid.tiles {
            let fold = fa
                .fold_of(&tile.country)
                .ok_or_else(|| Error::Coverage(format!("country {} has no fold", tile.country)))?;
            let params = models
                .get(&fold)
                .ok_or_else(|| Error::Coverage(format!("no model holds out fold {fold}")))?;
            log::info!("stitch {} with the fold-{fold} model", tile.tile_id);
            let comp = self.read_bands(&format!("composite/{}.hurt", tile.tile_id))?;
            let map = predict_map(params, &comp, &self.cfg.tiling)?;
            self.write_tile(&format!("maps/{}.hurt", tile.tile_id), map.into(), outputs)?;
            map_index.tiles.insert(tile.tile_id.clone(), fold);
        }
        self.write_json("maps/index.json", &map_index, outputs)
    }

    fn stage_evaluate(&self, outputs: &mut Vec<String>) -> Result<()> {
        let (fa, _) = self.folds()?;
        let text = fs::read(self.path("maps/index.json")).map_err(|e| Error::io(self.path("maps/index.json"), e))?;
        let map_index: MapIndex = serde_json::from_slice(&text)?;
        let mut scores = Vec::new();
        for tile in &self.grid.tiles {
            let id = &tile.tile_id;
            let pred = self.read_labels(&format!("maps/{id}.hurt"))?;
            let truth = self.read_labels(&format!("labels/{id}.hurt"))?;
            let model_test_fold = *map_index
                .tiles
                .get(id)
                .ok_or_else(|| Error::Coverage(format!("tile {id} has no map")))?;
            scores.push(CountryScore {
                country: tile.country.clone(),
                model_test_fold,
                cm: confusion(&pred, &truth)?,
            });
        }
        let reports = per_country_report(&scores, &fa)?;
        log::info!("continental accuracy {:.4}", reports.continental.accuracy);
        self.write_json("report.json", &reports, outputs)?;
        let mut csv = Vec::new();
        write_country_csv(&reports.countries, &mut csv)?;
        write_atomic(&self.path("country_metrics.csv"), &csv)?;
        outputs.push("country_metrics.csv".into());
        Ok(())
    }

    fn run_stage(&self, name: &str) -> Result<Vec<String>> {
        let mut outputs = Vec::new();
        match name {
            "synth" => self.stage_synth(&mut outputs),
            "composite" => self.stage_composite(&mut outputs),
            "fuse" => self.stage_fuse(&mut outputs),
            "folds" => self.stage_folds(&mut outputs),
            "train" => self.stage_train(&mut outputs),
            "stitch" => self.stage_stitch(&mut outputs),
            "evaluate" => self.stage_evaluate(&mut outputs),
            other => Err(Error::Config(format!("unknown stage {other}"))),
        }?;
        Ok(outputs)
    }
}

/// Lay the countries out as side-by-side blocks of `tiles_x x tiles_y` tiles.
pub fn continent_grid(countries: &[CountryRecord], c: &ContinentConfig) -> Result<TileGrid> {
    let codes: Vec<String> = countries.iter().map(|r| r.code.clone()).collect();
    let bbox = BBox::new(
        0.0,
        0.0,
        (codes.len() * c.tiles_x) as f64 * TILE_SIZE_M,
        c.tiles_y as f64 * TILE_SIZE_M,
    );
    let mut grid = make_grid(bbox, &RectPartition::strips(bbox, &codes))?;
    for t in &mut grid.tiles {
        t.width_px = c.tile_pixels;
        t.height_px = c.tile_pixels;
    }
    Ok(grid)
}

/// Run every stage and write the manifest. On a stage error the manifest
/// still lands on disk, naming the failing stage, and the error is returned.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let countries = read_countries_csv(&cfg.countries_csv)?;
    let grid = continent_grid(&countries, &cfg.continent)?;
    let run = Run {
        cfg,
        out: cfg.output_dir.clone(),
        countries,
        grid,
    };
    fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;

    let input_name = cfg
        .countries_csv
        .file_name()
        .map_or_else(|| "countries.csv".into(), |n| n.to_string_lossy().into_owned());
    let mut manifest = Manifest {
        config_sha256: sha256_hex(&serde_json::to_vec(&ConfigDigestView::from(cfg))?),
        inputs: [(input_name, sha256_file(&cfg.countries_csv)?)].into_iter().collect(),
        seeds: cfg.seeds,
        stages: Vec::new(),
        status: "running".into(),
        failed_stage: None,
        error: None,
    };
    for name in STAGES {
        log::info!("stage {name}");
        match run.run_stage(name) {
            Ok(paths) => {
                let outputs = paths
                    .iter()
                    .map(|p| Ok((p.clone(), sha256_file(&run.path(p))?)))
                    .collect::<Result<_>>()?;
                manifest.stages.push(StageRecord {
                    name: name.into(),
                    outputs,
                });
            }
            Err(e) => {
                manifest.status = "failed".into();
                manifest.failed_stage = Some(name.into());
                manifest.error = Some(e.to_string());
                write_manifest(&run.out, &manifest)?;
                return Err(e);
            }
        }
    }
    manifest.status = "ok".into();
    write_manifest(&run.out, &manifest)?;
    Ok(manifest)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(m)?;
    bytes.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)
}

/// The config minus its filesystem locations, so moving a run elsewhere
/// keeps the digest.
#[derive(Serialize)]
struct ConfigDigestView<'a> {
    continent: &'a ContinentConfig,
    scene: &'a SceneConfig,
    band_ranges: Vec<BandRange>,
    features: &'a FeatureConfig,
    tiling: &'a TilingScheme,
    weighting: WeightingStrategy,
    hyperparams: &'a Hyperparams,
    folds: &'a FoldSettings,
    train_pixels_per_tile: usize,
    seeds: &'a Seeds,
}

impl<'a> From<&'a PipelineConfig> for ConfigDigestView<'a> {
    fn from(c: &'a PipelineConfig) -> Self {
        Self {
            continent: &c.continent,
            scene: &c.scene,
            band_ranges: c.band_ranges(),
            features: &c.features,
            tiling: &c.tiling,
            weighting: c.weighting,
            hyperparams: &c.hyperparams,
            folds: &c.folds,
            train_pixels_per_tile: c.train_pixels_per_tile,
            seeds: &c.seeds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_countries(dir: &Path) -> PathBuf {
        let p = dir.join("countries.csv");
        fs::write(&p, "code,name,area_km2\nAAA,Alpha,400\nBBB,Beta,300\nCCC,Gamma,200\n").unwrap();
        p
    }

    fn small_config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            countries_csv: write_countries(dir),
            output_dir: dir.join("out"),
            continent: ContinentConfig {
                tiles_x: 1,
                tiles_y: 1,
                tile_pixels: 200,
                epsg: 3857,
            },
            scene: SceneConfig {
                num_regions: 24,
                ..SceneConfig::default()
            },
            band_ranges: None,
            features: FeatureConfig::default(),
            tiling: TilingScheme::new(64, 8).unwrap(),
            weighting: WeightingStrategy::Complement,
            hyperparams: Hyperparams {
                epochs: 5,
                ..Hyperparams::default()
            },
            folds: FoldSettings { k: 3 },
            train_pixels_per_tile: 2000,
            seeds: Seeds {
                synth: 1,
                sample: 2,
                train: 3,
            },
        }
    }

    #[test]
    fn small_run_lists_all_stages_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let m = run_pipeline(&cfg).unwrap();
        assert_eq!(m.status, "ok");
        let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, STAGES);
        assert!(m.stages.iter().all(|s| !s.outputs.is_empty()));
        let on_disk = Manifest::load(cfg.output_dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(on_disk, m);

        let again = PipelineConfig {
            output_dir: dir.path().join("out2"),
            ..cfg
        };
        let m2 = run_pipeline(&again).unwrap();
        assert_eq!(m.digests(), m2.digests());
        assert_eq!(m.config_sha256, m2.config_sha256);
    }

    #[test]
    fn missing_input_fails_before_any_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.countries_csv = dir.path().join("nope.csv");
        assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
        assert!(!cfg.output_dir.exists());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"countries_csv":"x.csv","output_dir":"o","weighting":"inverse","folds":{"k":3},
                "seeds":{"synth":1,"sample":2,"train":3},"learning_rat":0.1}"#,
        )
        .unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"countries_csv":"x.csv","output_dir":"o","weighting":"inverse","folds":{"k":3},
                "seeds":{"synth":1,"sample":2,"train":3}}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.countries_csv, dir.path().join("x.csv"));
        assert_eq!(cfg.output_dir, dir.path().join("o"));
        assert_eq!(cfg.train_pixels_per_tile, 5000);
    }

    #[test]
    fn failing_stage_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        // a directory where the composite of the first tile should go
        fs::create_dir_all(cfg.output_dir.join("composite/AAA_r000c000.hurt/x")).unwrap();
        let err = run_pipeline(&cfg);
        assert!(err.is_err());
        let m = Manifest::load(cfg.output_dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.status, "failed");
        assert_eq!(m.failed_stage.as_deref(), Some("composite"));
        assert_eq!(m.stages.len(), 1);
    }
}
