//! `hurpipe`: command-line driver for the urban-rural mapping pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hur_core::dhs::{evaluate_maps, hur_from_landcover, read_clusters_csv, PerturbationModel, DEFAULT_DRAWS};
use hur_core::metrics::{confusion, write_country_csv, MetricReport};
use hur_core::model::{compute_weights_present, predict_tile, train_baseline, BaselineParams, FeatureConfig, Features, Hyperparams, WeightingStrategy};
use hur_core::pipeline::{composite_years, default_band_ranges, fuse_labels, predict_map, run_pipeline, sample_tile, PipelineConfig};
use hur_core::preprocess::{class_counts, distribution_from_counts, esri_codes_from_targets, ClassMap, SmodMerge, NUM_TARGET_CLASSES};
use hur_core::raster::{gen_synthetic_scene, read_tile, write_tile, AnyTile, LabelRaster, RasterTile, SyntheticSceneSpec};
use hur_core::spatialcv::{assign_folds, fold_configs, read_countries_csv};
use hur_core::stitch::{naive_predict, TilingScheme};

#[derive(Parser)]
#[command(name = "hurpipe", version, about = "High-resolution urban-rural land cover mapping pipeline")]
struct Cli {
    /// Worker threads for within-stage parallelism (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: yearly band rasters, ESRI-coded labels, SMOD and truth.
    Synth(SynthArgs),
    /// Median-composite yearly rasters and normalise the result to [0, 1].
    Composite(CompositeArgs),
    /// Remap ESRI codes and split Built Area into rural/urban using SMOD.
    FuseLabels(FuseArgs),
    /// Assign countries to folds and print the fold rotations.
    Folds(FoldsArgs),
    /// Train the baseline classifier on composites and labels.
    Train(TrainArgs),
    /// Predict a whole raster in one pass.
    Predict(PredictArgs),
    /// Predict a raster with overlapping windows, keeping centre crops.
    Stitch(StitchArgs),
    /// Score a predicted map against reference labels.
    Evaluate(EvaluateArgs),
    /// Score one or two maps against displaced survey clusters.
    DhsEval(DhsArgs),
    /// Run every stage from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for year*.hurt, esri.hurt, smod.hurt and truth.hurt.
    #[arg(long)]
    out_dir: PathBuf,
    /// Full scene spec as JSON; overrides the size flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    width: u32,
    #[arg(long, default_value_t = 1000)]
    height: u32,
    #[arg(long, default_value_t = 3)]
    years: usize,
    #[arg(long, default_value_t = 0.1)]
    cloud_fraction: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct CompositeArgs {
    /// Yearly band rasters.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Keep raw values instead of scaling to [0, 1].
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct FuseArgs {
    /// Raster of raw ESRI land cover codes.
    #[arg(long)]
    esri: PathBuf,
    /// GHS-SMOD raster.
    #[arg(long)]
    smod: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FoldsArgs {
    /// CSV with columns code,name,area_km2.
    #[arg(long)]
    countries: PathBuf,
    #[arg(short, long, default_value_t = 5)]
    k: usize,
    /// Write the assignment JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Composite rasters, paired in order with --labels.
    #[arg(long, required = true, num_args = 1..)]
    composite: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    #[arg(long, default_value = "complement")]
    weighting: WeightingStrategy,
    /// Output parameter JSON.
    #[arg(long)]
    out: PathBuf,
    /// Seed for the mini-batch order.
    #[arg(long)]
    seed: u64,
    /// Seed for choosing training pixels.
    #[arg(long)]
    sample_seed: u64,
    /// Labelled pixels sampled per raster.
    #[arg(long, default_value_t = 5000)]
    pixels: usize,
    /// Odd neighbourhood size for context features; 1 keeps pixels local.
    #[arg(long, default_value_t = 5)]
    context_window: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StitchArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 250)]
    window: u32,
    /// Pixels dropped from each window edge.
    #[arg(long, default_value_t = 25)]
    margin: u32,
    /// Plain non-overlapping tiling instead (ignores --margin).
    #[arg(long)]
    naive: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    report: PathBuf,
    /// Optional per-class CSV (country,class,metric,value).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Scope name written into the report.
    #[arg(long, default_value = "map")]
    scope: String,
}

#[derive(Args)]
struct DhsArgs {
    /// CSV with columns id,lon,lat,label,year,country.
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    map_a: PathBuf,
    #[arg(long)]
    map_b: Option<PathBuf>,
    /// Settlement prior: urban/rural/non-settlement or 8-class land cover.
    #[arg(long)]
    prior: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    draws: usize,
    /// Perturbation model JSON (defaults: 2/5/10 km, 1% far rural, 5 m floor).
    #[arg(long)]
    perturbation: Option<PathBuf>,
    /// Report JSON path; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn read_bands(p: &Path) -> Result<RasterTile> {
    Ok(read_tile(p)?.into_bands().with_context(|| format!("{} is not a band raster", p.display()))?)
}

fn read_labels(p: &Path) -> Result<LabelRaster> {
    Ok(read_tile(p)?.into_labels().with_context(|| format!("{} is not a label raster", p.display()))?)
}

fn read_params(p: &Path) -> Result<BaselineParams> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let params: BaselineParams = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    params.validate()?;
    Ok(params)
}

fn write_json<T: serde::Serialize>(p: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    let tmp = p.with_extension("json.tmp");
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, p)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticSceneSpec {
            num_years: a.years,
            cloud_fraction: a.cloud_fraction,
            ..SyntheticSceneSpec::new(a.width, a.height, a.seed)
        },
    };
    let scene = gen_synthetic_scene(&spec)?;
    for (y, year) in scene.years.into_iter().enumerate() {
        write_tile(&year.into(), a.out_dir.join(format!("year{y}.hurt")))?;
    }
    write_tile(&esri_codes_from_targets(&scene.truth)?.into(), a.out_dir.join("esri.hurt"))?;
    write_tile(&scene.smod.into(), a.out_dir.join("smod.hurt"))?;
    write_tile(&scene.truth.into(), a.out_dir.join("truth.hurt"))?;
    Ok(())
}

fn composite(a: CompositeArgs) -> Result<()> {
    let years = a.inputs.iter().map(|p| read_bands(p)).collect::<Result<Vec<_>>>()?;
    let nb = years[0].band_count();
    let out = if a.no_normalize {
        let stack = hur_core::preprocess::ObservationStack::from_observations(years)?;
        hur_core::preprocess::median_composite(&stack)?
    } else {
        composite_years(years, &default_band_ranges(nb))?
    };
    write_tile(&out.into(), &a.out)?;
    Ok(())
}

fn fuse(a: FuseArgs) -> Result<()> {
    let labels = fuse_labels(&read_labels(&a.esri)?, &read_labels(&a.smod)?, &ClassMap::default(), &SmodMerge::default())?;
    write_tile(&labels.into(), &a.out)?;
    Ok(())
}

fn folds(a: FoldsArgs) -> Result<()> {
    let countries = read_countries_csv(&a.countries)?;
    let fa = assign_folds(&countries, a.k)?;
    let configs = fold_configs(a.k)?;
    let text = configs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
    match &a.out {
        Some(p) => write_json(p, &fa)?,
        None => println!("{}", serde_json::to_string_pretty(&fa)?),
    }
    for fold in 1..=a.k {
        eprintln!("fold {fold}: {}", fa.members(fold).join(", "));
    }
    eprintln!("{text}");
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    if a.composite.len() != a.labels.len() {
        bail!("{} composites but {} label rasters", a.composite.len(), a.labels.len());
    }
    let cfg = FeatureConfig {
        context_window: a.context_window,
        include_raw: true,
    };
    let k = usize::from(NUM_TARGET_CLASSES);
    let mut totals = vec![0u64; k];
    let mut x: Option<Features> = None;
    let mut y = Vec::new();
    for (i, (cp, lp)) in a.composite.iter().zip(&a.labels).enumerate() {
        let comp = read_bands(cp)?;
        let labels = read_labels(lp)?;
        for (t, c) in totals.iter_mut().zip(class_counts(&labels, k)?) {
            *t += c;
        }
        let (f, l) = sample_tile(&comp, &labels, &cfg, a.pixels, a.sample_seed.wrapping_add(i as u64))?;
        match &mut x {
            Some(all) => all.extend(&f)?,
            None => x = Some(f),
        }
        y.extend(l);
    }
    let x = x.expect("at least one raster");
    let weights = compute_weights_present(&distribution_from_counts(&totals)?, a.weighting)?;
    let hp = Hyperparams {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
    };
    let params = train_baseline(&x, &y, &weights, &hp, a.seed)?;
    log::info!("final loss {:.5}", params.loss_trace.last().copied().unwrap_or(f64::NAN));
    write_json(&a.out, &params)
}

fn predict(a: PredictArgs) -> Result<()> {
    let params = read_params(&a.params)?;
    let map = predict_tile(&params, &read_bands(&a.input)?)?.argmax()?;
    write_tile(&map.into(), &a.out)?;
    Ok(())
}

fn stitch(a: StitchArgs) -> Result<()> {
    let params = read_params(&a.params)?;
    let raster = read_bands(&a.input)?;
    let map = if a.naive {
        naive_predict(|w| predict_tile(&params, w), &raster, a.window)?
    } else {
        predict_map(&params, &raster, &TilingScheme::new(a.window, a.margin)?)?
    };
    write_tile(&AnyTile::from(map), &a.out)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cm = confusion(&read_labels(&a.pred)?, &read_labels(&a.truth)?)?;
    let report = MetricReport::from_matrix(a.scope, &cm)?;
    println!("accuracy {:.4}  mean IoU {:.4}  kappa {:.4}", report.accuracy, report.mean_iou, report.kappa);
    write_json(&a.report, &report)?;
    if let Some(p) = &a.csv {
        let mut buf = Vec::new();
        write_country_csv(std::slice::from_ref(&report), &mut buf)?;
        fs::write(p, buf)?;
    }
    Ok(())
}

/// Accept either a three-class urban/rural map or an 8-class land cover map.
fn read_hur(p: &Path) -> Result<LabelRaster> {
    let l = read_labels(p)?;
    if l.num_classes() == NUM_TARGET_CLASSES {
        Ok(hur_from_landcover(&l, 6, 7)?)
    } else {
        Ok(l)
    }
}

fn dhs_eval(a: DhsArgs) -> Result<()> {
    let clusters = read_clusters_csv(&a.clusters)?;
    let pm = match &a.perturbation {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => PerturbationModel::default(),
    };
    let map_a = read_hur(&a.map_a)?;
    let map_b = a.map_b.as_deref().map(read_hur).transpose()?;
    let prior = read_hur(&a.prior)?;
    let report = evaluate_maps(&clusters, &map_a, map_b.as_ref(), &prior, &pm, a.draws, a.seed)?;
    eprintln!(
        "{} clusters scored, {} excluded; map A accuracy {:.4} kappa {:.4}",
        report.clusters_evaluated,
        report.excluded.len(),
        report.map_a.overall.accuracy,
        report.map_a.overall.kappa
    );
    match &a.report {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(o) = a.output_dir {
        cfg.output_dir = o;
    }
    let manifest = run_pipeline(&cfg)?;
    let outputs: usize = manifest.stages.iter().map(|s| s.outputs.len()).sum();
    eprintln!(
        "pipeline ok: {} stages, {outputs} outputs, manifest in {}",
        manifest.stages.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Composite(a) => composite(a),
        Command::FuseLabels(a) => fuse(a),
        Command::Folds(a) => folds(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Stitch(a) => stitch(a),
        Command::Evaluate(a) => evaluate(a),
        Command::DhsEval(a) => dhs_eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}
