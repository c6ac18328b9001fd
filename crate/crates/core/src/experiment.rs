//! Config-driven experiments: the `render`, `lift`, `robustness` and `bench`
//! commands of the command-line tool.
//!
//! Every artifact carries the config hash and seed: CSV files start with a
//! `# config_hash=... seed=...` comment, binary tensors and JSON summaries
//! embed a `provenance` object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::bevpool::{pool, BevGrid, GridSpec, PoolMode};
use crate::binning::BinSpec;
use crate::error::{Error, Result};
use crate::geometry::{default_rig, CameraRig, RigConfig};
use crate::lifting::{build_wedge, build_wedge_depth, fuse, ContextMap, DistributionMap, WedgeCloud};
use crate::robustness::{
    localization_study, observe_objects, perturb_rig, sample_disturbances, scatter_overlap,
    summarize, write_long_csv, DisturbanceSpec, ErrorStudy, LocalizationSetup, OverlapBins,
    OverlapReport, Parameterization, DEFAULT_SIGMA_DEG,
};
use crate::scene::{
    generate_scene, histogram, predict_distribution, render, HitKind, NoiseModel, PixelMaps,
    Scene, SceneTemplate,
};
use crate::tensor::Provenance;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Generate {
        template: SceneTemplate,
        n_boxes: usize,
        seed: u64,
    },
    /// Scene JSON, relative to the config file.
    Path(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    #[serde(default = "stride_8")]
    pub stride: f64,
    #[serde(default = "one")]
    pub depth_hist_width: f64,
    #[serde(default = "tenth")]
    pub height_hist_width: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            stride: 8.0,
            depth_hist_width: 1.0,
            height_hist_width: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSettings {
    #[serde(default = "stride_16")]
    pub stride: f64,
    #[serde(default = "one_hot")]
    pub noise: NoiseModel,
    /// Probability mass spread uniformly over all bins, like a softmax
    /// that never outputs exact zeros.
    #[serde(default)]
    pub floor: f64,
}

impl Default for LiftSettings {
    fn default() -> Self {
        Self {
            stride: 16.0,
            noise: NoiseModel::one_hot(),
            floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSettings {
    #[serde(default = "sigma")]
    pub sigma_roll_deg: f64,
    #[serde(default = "sigma")]
    pub sigma_pitch_deg: f64,
    #[serde(default = "hundred")]
    pub n_trials: usize,
}

impl Default for DisturbanceSettings {
    fn default() -> Self {
        Self {
            sigma_roll_deg: DEFAULT_SIGMA_DEG,
            sigma_pitch_deg: DEFAULT_SIGMA_DEG,
            n_trials: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSettings {
    #[serde(default = "stride_8")]
    pub stride: f64,
    #[serde(default)]
    pub overlap_bins: OverlapBins,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        Self {
            stride: 8.0,
            overlap_bins: OverlapBins::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    #[serde(default = "two")]
    pub warmup: usize,
    #[serde(default = "ten")]
    pub iterations: usize,
    #[serde(default = "stride_16")]
    pub stride: f64,
    #[serde(default = "sixteen")]
    pub channels: usize,
    #[serde(default = "bench_floor")]
    pub floor: f64,
    #[serde(default = "BinSpec::default_height")]
    pub height_bins: BinSpec,
    #[serde(default = "BinSpec::default_depth")]
    pub depth_bins: BinSpec,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            warmup: 2,
            iterations: 10,
            stride: 16.0,
            channels: 16,
            floor: bench_floor(),
            height_bins: BinSpec::default_height(),
            depth_bins: BinSpec::default_depth(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn tenth() -> f64 {
    0.1
}
fn stride_8() -> f64 {
    8.0
}
fn stride_16() -> f64 {
    16.0
}
fn sigma() -> f64 {
    DEFAULT_SIGMA_DEG
}
fn hundred() -> usize {
    100
}
fn two() -> usize {
    2
}
fn ten() -> usize {
    10
}
fn sixteen() -> usize {
    16
}
fn bench_floor() -> f64 {
    1e-3
}
fn one_hot() -> NoiseModel {
    NoiseModel::one_hot()
}
fn version() -> u32 {
    CONFIG_VERSION
}
fn blur_one() -> NoiseModel {
    NoiseModel::blur(1.0)
}
fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Height bins for scene experiments: they have to reach bus roofs.
pub fn scene_height_bins() -> BinSpec {
    BinSpec::uniform(90, -1.0, 4.0).expect("valid bins")
}

fn default_grid() -> GridSpec {
    GridSpec::default_with_channels(1)
}

/// JSON experiment config. Unset sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Rig JSON relative to the config file; the built-in rig when absent.
    #[serde(default)]
    pub rig: Option<PathBuf>,
    pub scene: SceneSource,
    #[serde(default = "scene_height_bins")]
    pub height_bins: BinSpec,
    #[serde(default = "BinSpec::default_depth")]
    pub depth_bins: BinSpec,
    /// Grid extent and resolution; `channels` is set per command.
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    /// Prediction noise for the robustness study.
    #[serde(default = "blur_one")]
    pub noise: NoiseModel,
    #[serde(default)]
    pub disturbance: DisturbanceSettings,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub lift: LiftSettings,
    #[serde(default)]
    pub robustness: RobustnessSettings,
    #[serde(default)]
    pub bench: BenchSettings,
    #[serde(default = "out_dir")]
    pub output_dir: PathBuf,
    /// Fixed-order pooling; otherwise cells are reduced in parallel.
    #[serde(default)]
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !self.height_bins.strategy().is_height() {
            return Err(Error::WrongStrategy(self.height_bins.strategy().to_string()));
        }
        if !self.depth_bins.strategy().is_depth() {
            return Err(Error::WrongStrategy(self.depth_bins.strategy().to_string()));
        }
        if !self.bench.height_bins.strategy().is_height() {
            return Err(Error::WrongStrategy(self.bench.height_bins.strategy().to_string()));
        }
        if !self.bench.depth_bins.strategy().is_depth() {
            return Err(Error::WrongStrategy(self.bench.depth_bins.strategy().to_string()));
        }
        for (name, s) in [
            ("render.stride", self.render.stride),
            ("lift.stride", self.lift.stride),
            ("robustness.stride", self.robustness.stride),
            ("bench.stride", self.bench.stride),
            ("render.depth_hist_width", self.render.depth_hist_width),
            ("render.height_hist_width", self.render.height_hist_width),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {s}")));
            }
        }
        for (name, f) in [("lift.floor", self.lift.floor), ("bench.floor", self.bench.floor)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {f}")));
            }
        }
        if self.bench.iterations == 0 || self.bench.channels == 0 {
            return Err(Error::Config(
                "bench.iterations and bench.channels must be >= 1".into(),
            ));
        }
        let b = &self.robustness.overlap_bins;
        if !(b.v_px > 0.0 && b.depth_m > 0.0 && b.height_m > 0.0) {
            return Err(Error::Config("overlap bin sizes must be positive".into()));
        }
        self.noise.validate()?;
        self.lift.noise.validate()?;
        self.disturbance_spec().validate()
    }

    pub fn disturbance_spec(&self) -> DisturbanceSpec {
        DisturbanceSpec {
            sigma_roll_deg: self.disturbance.sigma_roll_deg,
            sigma_pitch_deg: self.disturbance.sigma_pitch_deg,
            seed: self.seed,
            n_trials: self.disturbance.n_trials,
        }
    }

    fn grid_with_channels(&self, channels: usize) -> Result<GridSpec> {
        let g = &self.grid;
        GridSpec::new(g.x_min, g.x_max, g.y_min, g.y_max, g.res_x, g.res_y, channels)
    }
}

/// A loaded config with its rig and scene resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub rig: CameraRig,
    pub scene: Scene,
    pub config_hash: String,
}

fn read_config_file(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

impl Experiment {
    /// Reads a config file; relative rig and scene paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let config = ExperimentConfig::from_json(&read_config_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::resolve(config, base)
    }

    pub fn resolve(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let rig = match &config.rig {
            Some(p) => {
                let text = read_config_file(&base_dir.join(p))?;
                let rc: RigConfig =
                    serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                rc.build()?
            }
            None => default_rig(),
        };
        let scene = match &config.scene {
            SceneSource::Generate {
                template,
                n_boxes,
                seed,
            } => generate_scene(*template, *n_boxes, *seed)?,
            SceneSource::Path(p) => Scene::from_json(&read_config_file(&base_dir.join(p))?)?,
        };
        let config_hash = config_hash(&config, &rig, &scene)?;
        Ok(Self {
            config,
            rig,
            scene,
            config_hash,
        })
    }

    /// Applies command-line overrides and recomputes the hash.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.config.seed = seed;
        }
        if let Some(out) = &o.out {
            self.config.output_dir = out.clone();
        }
        if o.deterministic {
            self.config.deterministic = true;
        }
        self.config.validate()?;
        self.config_hash = config_hash(&self.config, &self.rig, &self.scene)?;
        Ok(self)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.config_hash.clone(), self.config.seed)
    }

    fn pool_mode(&self) -> PoolMode {
        if self.config.deterministic {
            PoolMode::FixedOrder
        } else {
            PoolMode::Partitioned
        }
    }
}

/// SHA-256 over the canonical JSON of the config (without the output
/// directory) together with the resolved rig and scene.
pub fn config_hash(config: &ExperimentConfig, rig: &CameraRig, scene: &Scene) -> Result<String> {
    let mut value = serde_json::to_value(config)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("output_dir");
        obj.remove("rig");
        obj.remove("scene");
    }
    let doc = json!({
        "config": value,
        "rig": RigConfig::from_rig(rig),
        "scene": scene,
    });
    // serde_json maps keep keys sorted, so this text is canonical
    let digest = Sha256::digest(serde_json::to_string(&doc)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

/// Encoding of bulk artifacts. JSON summaries are always written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    /// Summaries only.
    Json,
    /// Binary tensors for maps, clouds and grids; small tables stay CSV.
    Bin,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "bin" => Ok(Self::Bin),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

fn spread_stats(values: &[f64]) -> serde_json::Value {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    match summarize(&finite) {
        Some(s) => {
            let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
            let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let var = finite.iter().map(|v| (v - s.mean).powi(2)).sum::<f64>() / s.count as f64;
            json!({
                "count": s.count, "min": min, "max": max, "spread": max - min,
                "mean": s.mean, "median": s.median, "std": var.sqrt(),
            })
        }
        None => json!({ "count": 0 }),
    }
}

/// Renders ground truth and writes pixel maps, depth and height
/// histograms and a spread summary.
pub fn cmd_render(exp: &Experiment, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let cfg = &exp.config;
    let prov = exp.provenance();
    let maps = render(&exp.scene, &exp.rig, cfg.render.stride)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    match format {
        OutputFormat::Csv => out.write("render_pixels.csv", |w| maps.write_csv(w, Some(&prov)))?,
        OutputFormat::Bin => out.write("render_pixels.bin", |w| maps.write_bin(w, Some(&prov)))?,
        OutputFormat::Json => {}
    }
    let depths = maps.depths();
    let heights = maps.heights();
    let dh = histogram(&depths, cfg.render.depth_hist_width);
    let hh = histogram(&heights, cfg.render.height_hist_width);
    if format != OutputFormat::Json {
        if let Ok(h) = &dh {
            out.write("render_depth_hist.csv", |w| h.write_csv(w, Some(&prov)))?;
        }
        if let Ok(h) = &hh {
            out.write("render_height_hist.csv", |w| h.write_csv(w, Some(&prov)))?;
        }
    }
    let counts = kind_counts(&maps);
    let ds = spread_stats(&depths);
    let hs = spread_stats(&heights);
    let ratio = match (ds["spread"].as_f64(), hs["spread"].as_f64()) {
        (Some(d), Some(h)) if h > 0.0 => json!(d / h),
        _ => serde_json::Value::Null,
    };
    out.json(
        "render_summary.json",
        &json!({
            "provenance": prov,
            "command": "render",
            "cols": maps.width,
            "rows": maps.height,
            "stride": maps.stride,
            "cells": { "ground": counts.0, "object": counts.1, "sky": counts.2 },
            "depth": ds,
            "height_above_ground": hs,
            "depth_to_height_spread_ratio": ratio,
            "depth_histogram_bins": dh.as_ref().map(|h| h.counts.len()).unwrap_or(0),
            "height_histogram_bins": hh.as_ref().map(|h| h.counts.len()).unwrap_or(0),
        }),
    )?;
    Ok(out.written)
}

fn kind_counts(maps: &PixelMaps) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for cell in 0..maps.cells() {
        match maps.kind(cell) {
            HitKind::Ground => c.0 += 1,
            HitKind::Box(_) => c.1 += 1,
            HitKind::Sky => c.2 += 1,
        }
    }
    c
}

/// Per-cell truths clamped into the bin range; sky cells are `None`.
fn clamped_truths(values: impl Iterator<Item = Option<f64>>, bins: &BinSpec) -> Vec<Option<f64>> {
    values
        .map(|v| v.map(|x| x.clamp(bins.range_min(), bins.range_max())))
        .collect()
}

/// Mixes a distribution map with the uniform distribution: `(1 - floor) p + floor / N`.
pub fn with_floor(dist: DistributionMap, floor: f64) -> Result<DistributionMap> {
    if floor == 0.0 {
        return Ok(dist);
    }
    let n = dist.n_bins();
    let cells = dist.width() * dist.height();
    let mut data = Vec::with_capacity(cells * n);
    let mut valid = Vec::with_capacity(cells);
    for cell in 0..cells {
        data.extend(dist.weights(cell).iter().map(|w| (1.0 - floor) * w + floor / n as f64));
        valid.push(dist.is_valid(cell));
    }
    DistributionMap::new(dist.width(), dist.height(), n, data, valid)
}

/// Height and depth distributions conditioned on rendered truth.
pub fn predicted_maps(
    maps: &PixelMaps,
    height_bins: &BinSpec,
    depth_bins: &BinSpec,
    noise: &NoiseModel,
    floor: f64,
) -> Result<(DistributionMap, DistributionMap)> {
    let ht = clamped_truths((0..maps.cells()).map(|c| maps.height_above_ground(c)), height_bins);
    let dt = clamped_truths((0..maps.cells()).map(|c| maps.depth(c)), depth_bins);
    let hd = predict_distribution(maps.width, maps.height, &ht, height_bins, noise)?;
    let dd = predict_distribution(maps.width, maps.height, &dt, depth_bins, noise)?;
    Ok((with_floor(hd, floor)?, with_floor(dd, floor)?))
}

/// Context channels `[1, is_object, is_ground]` per cell.
pub fn semantic_context(maps: &PixelMaps) -> Result<ContextMap> {
    let data = (0..maps.cells())
        .flat_map(|c| match maps.kind(c) {
            HitKind::Box(_) => [1.0, 1.0, 0.0],
            HitKind::Ground => [1.0, 0.0, 1.0],
            HitKind::Sky => [1.0, 0.0, 0.0],
        })
        .collect();
    ContextMap::new(maps.width, maps.height, 3, data)
}

fn grid_checksum(grid: &BevGrid) -> serde_json::Value {
    json!({
        "channel_sums": grid.channel_sums(),
        "nonzero_cells": grid.occupied().count(),
        "dropped_points": grid.dropped,
    })
}

/// Both parameterizations lifted from the same feature maps.
pub struct LiftRun {
    pub height_cloud: WedgeCloud,
    pub depth_cloud: WedgeCloud,
    pub height_grid: BevGrid,
    pub depth_grid: BevGrid,
}

pub fn run_lift(exp: &Experiment) -> Result<LiftRun> {
    let cfg = &exp.config;
    let stride = cfg.lift.stride;
    let maps = render(&exp.scene, &exp.rig, stride)?;
    let context = semantic_context(&maps)?;
    let (hd, dd) = predicted_maps(&maps, &cfg.height_bins, &cfg.depth_bins, &cfg.lift.noise, cfg.lift.floor)?;
    let height_cloud = build_wedge(&fuse(context.clone(), hd)?, &cfg.height_bins, &exp.rig, stride)?;
    let depth_cloud = build_wedge_depth(&fuse(context, dd)?, &cfg.depth_bins, &exp.rig, stride)?;
    let grid = cfg.grid_with_channels(3)?;
    let height_grid = pool(&height_cloud, &grid, exp.pool_mode())?;
    let depth_grid = pool(&depth_cloud, &grid, exp.pool_mode())?;
    Ok(LiftRun {
        height_cloud,
        depth_cloud,
        height_grid,
        depth_grid,
    })
}

/// Lifts the rendered scene with both parameterizations, pools both clouds
/// and writes points, grids, point counts and grid checksums.
pub fn cmd_lift(exp: &Experiment, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let cfg = &exp.config;
    let prov = exp.provenance();
    let run = run_lift(exp)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let parts = [
        ("height", &run.height_cloud, &run.height_grid, cfg.height_bins.n_bins()),
        ("depth", &run.depth_cloud, &run.depth_grid, cfg.depth_bins.n_bins()),
    ];
    for (name, cloud, grid, _) in parts {
        match format {
            OutputFormat::Csv => {
                out.write(&format!("lift_{name}_points.csv"), |w| cloud.write_csv(w, Some(&prov)))?;
                out.write(&format!("lift_{name}_grid.csv"), |w| grid.write_csv(w, Some(&prov)))?;
            }
            OutputFormat::Bin => {
                out.write(&format!("lift_{name}_points.bin"), |w| cloud.write_bin(w, Some(&prov)))?;
                out.write(&format!("lift_{name}_grid.bin"), |w| grid.write_bin(w, Some(&prov)))?;
            }
            OutputFormat::Json => {}
        }
    }
    if format != OutputFormat::Json {
        out.write("lift_counts.csv", |w| {
            prov.write_csv_comment(w)?;
            writeln!(w, "parameterization,n_bins,points,horizon_skipped,masked_skipped,dropped,nonzero_cells")?;
            for (name, cloud, grid, n_bins) in parts {
                writeln!(
                    w,
                    "{name},{n_bins},{},{},{},{},{}",
                    cloud.len(),
                    cloud.horizon_skipped,
                    cloud.masked_skipped,
                    grid.dropped,
                    grid.occupied().count()
                )?;
            }
            Ok(())
        })?;
    }
    let section = |cloud: &WedgeCloud, grid: &BevGrid, bins: &BinSpec| {
        json!({
            "bins": bins,
            "points": cloud.len(),
            "horizon_skipped": cloud.horizon_skipped,
            "masked_skipped": cloud.masked_skipped,
            "grid": grid_checksum(grid),
        })
    };
    out.json(
        "lift_summary.json",
        &json!({
            "provenance": prov,
            "command": "lift",
            "stride": cfg.lift.stride,
            "pool_mode": exp.pool_mode(),
            "grid": { "nx": run.height_grid.spec.nx(), "ny": run.height_grid.spec.ny(), "channels": 3 },
            "height": section(&run.height_cloud, &run.height_grid, &cfg.height_bins),
            "depth": section(&run.depth_cloud, &run.depth_grid, &cfg.depth_bins),
            "point_ratio": run.height_cloud.len() as f64 / run.depth_cloud.len().max(1) as f64,
        }),
    )?;
    Ok(out.written)
}

/// Overlap reports and localization errors for the configured disturbance.
pub struct RobustnessRun {
    pub overlaps: Vec<OverlapReport>,
    pub study: ErrorStudy,
}

pub fn run_robustness(exp: &Experiment) -> Result<RobustnessRun> {
    let cfg = &exp.config;
    let spec = cfg.disturbance_spec();
    let overlaps = scatter_overlap(&exp.scene, &exp.rig, &spec, &cfg.robustness.overlap_bins)?;
    let setup = LocalizationSetup {
        height_bins: &cfg.height_bins,
        depth_bins: &cfg.depth_bins,
        noise: &cfg.noise,
        stride: cfg.robustness.stride,
    };
    let study = localization_study(&exp.scene, &exp.rig, &setup, &spec)?;
    Ok(RobustnessRun { overlaps, study })
}

/// Runs the disturbance study and writes the long-format table, a scatter
/// table for plotting and a JSON summary.
pub fn cmd_robustness(exp: &Experiment, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let cfg = &exp.config;
    let prov = exp.provenance();
    let run = run_robustness(exp)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    if format != OutputFormat::Json {
        out.write("robustness_long.csv", |w| {
            write_long_csv(w, &run.overlaps, &run.study, Some(&prov))
        })?;
        out.write("robustness_scatter.csv", |w| {
            prov.write_csv_comment(w)?;
            writeln!(w, "condition,trial,object,v,depth,height")?;
            let draws = sample_disturbances(&cfg.disturbance_spec())?;
            let first = draws.first().copied().unwrap_or((0.0, 0.0));
            let disturbed = perturb_rig(&exp.rig, first.0, first.1)?;
            for (cond, rig) in [("clean", &exp.rig), ("disturbed", &disturbed)] {
                for o in observe_objects(&exp.scene, rig) {
                    writeln!(w, "{cond},0,{},{},{},{}", o.object, o.v, o.depth, o.height)?;
                }
            }
            Ok(())
        })?;
    }
    let wins = run
        .overlaps
        .iter()
        .filter(|r| r.overlap_height > r.overlap_depth)
        .count();
    let mean = |f: fn(&OverlapReport) -> f64| {
        run.overlaps.iter().map(f).sum::<f64>() / run.overlaps.len() as f64
    };
    let margins: Vec<f64> = run
        .overlaps
        .iter()
        .map(|r| r.overlap_height - r.overlap_depth)
        .collect();
    let errors = |p: Parameterization| {
        json!({
            "clean": run.study.clean.summary(p),
            "disturbed": summarize(&run.study.pooled(p)),
        })
    };
    out.json(
        "robustness_summary.json",
        &json!({
            "provenance": prov,
            "command": "robustness",
            "grouping": {
                "camera_height": exp.rig.ground_height(),
                "noise": cfg.noise,
                "disturbance": cfg.disturbance_spec(),
            },
            "overlap": {
                "trials": run.overlaps.len(),
                "height_wins": wins,
                "mean_height": mean(|r| r.overlap_height),
                "mean_depth": mean(|r| r.overlap_depth),
                "margin": summarize(&margins),
                "bins": cfg.robustness.overlap_bins,
            },
            "distance_error": {
                "height": errors(Parameterization::Height),
                "depth": errors(Parameterization::Depth),
            },
        }),
    )?;
    Ok(out.written)
}

/// Deterministic pseudo-features shared by both bench configurations.
fn bench_context(width: usize, height: usize, channels: usize, seed: u64) -> Result<ContextMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    ContextMap::new(width, height, channels, data)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchTiming {
    pub parameterization: Parameterization,
    pub n_bins: usize,
    pub points: usize,
    pub horizon_skipped: usize,
    pub masked_skipped: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub warmup: usize,
    pub iterations: usize,
    pub channels: usize,
    pub threads: usize,
    pub height: BenchTiming,
    pub depth: BenchTiming,
    /// height / depth median lift+pool time
    pub time_ratio: f64,
    pub point_ratio: f64,
}

/// Times lift+pool for the height and depth configurations on identical
/// feature maps. Iterations alternate between the two to share any drift.
pub fn run_bench(exp: &Experiment) -> Result<BenchReport> {
    let cfg = &exp.config;
    let b = &cfg.bench;
    let maps = render(&exp.scene, &exp.rig, b.stride)?;
    let context = bench_context(maps.width, maps.height, b.channels, exp.config.seed)?;
    let (hd, dd) = predicted_maps(&maps, &b.height_bins, &b.depth_bins, &cfg.lift.noise, b.floor)?;
    let hf = fuse(context.clone(), hd)?;
    let df = fuse(context, dd)?;
    let grid = cfg.grid_with_channels(b.channels)?;
    let mode = exp.pool_mode();
    let height_once = || -> Result<(WedgeCloud, f64)> {
        let t = Instant::now();
        let cloud = build_wedge(&hf, &b.height_bins, &exp.rig, b.stride)?;
        pool(&cloud, &grid, mode)?;
        Ok((cloud, t.elapsed().as_secs_f64() * 1e3))
    };
    let depth_once = || -> Result<(WedgeCloud, f64)> {
        let t = Instant::now();
        let cloud = build_wedge_depth(&df, &b.depth_bins, &exp.rig, b.stride)?;
        pool(&cloud, &grid, mode)?;
        Ok((cloud, t.elapsed().as_secs_f64() * 1e3))
    };
    for _ in 0..b.warmup {
        height_once()?;
        depth_once()?;
    }
    let (mut ht, mut dt) = (Vec::new(), Vec::new());
    let (mut hc, mut dc) = (None, None);
    for i in 0..b.iterations {
        let (h, d) = if i % 2 == 0 {
            let h = height_once()?;
            (h, depth_once()?)
        } else {
            let d = depth_once()?;
            (height_once()?, d)
        };
        ht.push(h.1);
        dt.push(d.1);
        hc = Some(h.0);
        dc = Some(d.0);
    }
    let (hc, dc) = (hc.expect("iterations >= 1"), dc.expect("iterations >= 1"));
    let timing = |p, bins: &BinSpec, cloud: &WedgeCloud, times: &[f64]| {
        let s = summarize(times).expect("iterations >= 1");
        BenchTiming {
            parameterization: p,
            n_bins: bins.n_bins(),
            points: cloud.len(),
            horizon_skipped: cloud.horizon_skipped,
            masked_skipped: cloud.masked_skipped,
            median_ms: s.median,
            mean_ms: s.mean,
            min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        }
    };
    let height = timing(Parameterization::Height, &b.height_bins, &hc, &ht);
    let depth = timing(Parameterization::Depth, &b.depth_bins, &dc, &dt);
    Ok(BenchReport {
        warmup: b.warmup,
        iterations: b.iterations,
        channels: b.channels,
        threads: rayon::current_num_threads(),
        time_ratio: height.median_ms / depth.median_ms,
        point_ratio: height.points as f64 / depth.points.max(1) as f64,
        height,
        depth,
    })
}

/// Writes timings to JSON and the (deterministic) point counts to CSV.
pub fn cmd_bench(exp: &Experiment, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let prov = exp.provenance();
    let report = run_bench(exp)?;
    let mut out = Outputs::new(&exp.config.output_dir)?;
    if format != OutputFormat::Json {
        out.write("bench_counts.csv", |w| {
            prov.write_csv_comment(w)?;
            writeln!(w, "parameterization,n_bins,points,horizon_skipped,masked_skipped")?;
            for t in [&report.height, &report.depth] {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    t.parameterization.name(),
                    t.n_bins,
                    t.points,
                    t.horizon_skipped,
                    t.masked_skipped
                )?;
            }
            Ok(())
        })?;
    }
    let mut value = serde_json::to_value(&report)?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("provenance".into(), serde_json::to_value(&prov)?);
        obj.insert("command".into(), json!("bench"));
    }
    out.json("bench_report.json", &value)?;
    Ok(out.written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"scene": {{"generate": {{"template": "corridor", "n_boxes": 6, "seed": 3}}}},
                "output_dir": {:?}, "seed": 5}}"#,
            dir.to_str().unwrap()
        ))
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = base_config(Path::new("/tmp/x"));
        assert_eq!(c.version, CONFIG_VERSION);
        assert_eq!(c.height_bins.n_bins(), 90);
        assert_eq!(c.depth_bins.n_bins(), 206);
        assert_eq!(c.bench.height_bins, BinSpec::default_height());
        assert_eq!(c.disturbance.sigma_pitch_deg, 1.67);
        assert_eq!(c.disturbance_spec().seed, 5);
        c.validate().unwrap();
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let bad = [
            r#"{"scene": {"generate": {"template": "corridor", "n_boxes": 2, "seed": 1}}, "bogus": 1}"#,
            r#"{"scene": {"generate": {"template": "corridor", "n_boxes": 2, "seed": 1}}, "version": 9}"#,
            r#"{"scene": {"generate": {"template": "corridor", "n_boxes": 2, "seed": 1}},
                "height_bins": {"strategy": "UD", "n_bins": 0, "range_min": -1, "range_max": 1}}"#,
            r#"{"scene": {"generate": {"template": "corridor", "n_boxes": 2, "seed": 1}},
                "height_bins": {"strategy": "DEPTH_UD", "n_bins": 10, "range_min": 1, "range_max": 10}}"#,
            r#"{"scene": {"generate": {"template": "corridor", "n_boxes": 2, "seed": 1}}, "bench": {"iterations": 0}}"#,
            r#"{"scene": {"generate": {"template": "corridor", "n_boxes": 2, "seed": 1}}, "lift": {"stride": 0}}"#,
        ];
        for text in bad {
            let err = ExperimentConfig::from_json(text).and_then(|c| c.validate()).unwrap_err();
            assert!(err.is_config_error(), "{text}: {err}");
        }
        let missing = Experiment::load(Path::new("/nonexistent/config.json")).unwrap_err();
        assert!(missing.is_config_error());
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a = Experiment::resolve(base_config(Path::new("/tmp/a")), Path::new(".")).unwrap();
        let b = Experiment::resolve(base_config(Path::new("/tmp/b")), Path::new(".")).unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
        let c = b
            .with_overrides(&Overrides {
                seed: Some(6),
                ..Default::default()
            })
            .unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }

    #[test]
    fn floor_keeps_distributions_normalized() {
        let d = DistributionMap::new(1, 2, 3, vec![1.0, 0.0, 0.0, 0.2, 0.3, 0.5], vec![true, false]).unwrap();
        let f = with_floor(d, 0.03).unwrap();
        assert!((f.weights(0)[1] - 0.01).abs() < 1e-15);
        assert!((f.weights(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(!f.is_valid(1));
    }

    #[test]
    fn one_hot_lift_only_touches_surface_cells() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::resolve(base_config(dir.path()), Path::new(".")).unwrap();
        let run = run_lift(&exp).unwrap();
        // one point per lifted cell, and the ground-truth points land where
        // the rendered surfaces are
        assert_eq!(
            run.height_cloud.len() + run.height_cloud.horizon_skipped + run.height_cloud.masked_skipped,
            run.depth_cloud.len() + run.depth_cloud.masked_skipped
        );
        let grid = cfg_grid(&exp);
        let maps = render(&exp.scene, &exp.rig, exp.config.lift.stride).unwrap();
        let mut surface = std::collections::BTreeSet::new();
        for c in 0..maps.cells() {
            if maps.kind(c) != HitKind::Sky {
                let p = maps.hits[c].point;
                if let Some(cell) = crate::bevpool::grid_cell_of(p.x, p.y, &grid) {
                    surface.insert(cell);
                }
            }
        }
        // height bins quantize, so allow neighbouring cells of a surface cell
        for (ix, iy) in run.height_grid.occupied() {
            let near = surface.iter().any(|&(sx, sy)| {
                (sx as i64 - ix as i64).abs() <= 1 && (sy as i64 - iy as i64).abs() <= 1
            });
            assert!(near, "cell ({ix}, {iy}) has no nearby surface");
        }
    }

    fn cfg_grid(exp: &Experiment) -> GridSpec {
        exp.config.grid_with_channels(3).unwrap()
    }
}
