//! Synthetic roadside scenes and their per-pixel ground truth.
//!
//! A scene is the ground plane `z = 0` restricted to a rectangular extent
//! plus a set of yaw-rotated boxes. Rays are cast analytically: the ground
//! by ray-plane intersection, boxes by the slab method in box-local
//! coordinates. Ground outside the extent is not modelled, so rays that
//! leave it without hitting a box count as sky.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::binning::BinSpec;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraRig};
use crate::lifting::{cell_pixel, DistributionMap};
use crate::tensor::{write_tensor, Provenance, TensorMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub boxes: Vec<Box3D>,
    pub extent: Extent,
    pub rng_seed: u64,
}

impl Scene {
    pub fn new(boxes: Vec<Box3D>, extent: Extent, rng_seed: u64) -> Result<Self> {
        let scene = Self {
            boxes,
            extent,
            rng_seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn empty(extent: Extent) -> Self {
        Self {
            boxes: Vec::new(),
            extent,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.extent;
        if !(e.x_min < e.x_max && e.y_min < e.y_max) {
            return Err(Error::InvalidGeometry("scene extent is empty".into()));
        }
        for (k, b) in self.boxes.iter().enumerate() {
            if b.z < 0.0 {
                return Err(Error::InvalidBox(format!("box {k} center is below ground")));
            }
            if !b.footprint().iter().all(|[x, y]| e.contains(*x, *y)) {
                return Err(Error::InvalidBox(format!("box {k} leaves the scene extent")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }
}

/// What a ray hit first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HitKind {
    Ground,
    Box(usize),
    Sky,
}

impl HitKind {
    /// -1 sky, 0 ground, k + 1 for box k.
    pub fn code(self) -> i64 {
        match self {
            HitKind::Sky => -1,
            HitKind::Ground => 0,
            HitKind::Box(k) => k as i64 + 1,
        }
    }

    pub fn is_sky(self) -> bool {
        matches!(self, HitKind::Sky)
    }
}

/// Entry parameter of a ray into a box, if it enters in front of the origin.
pub fn ray_box_entry(b: &Box3D, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let to_local = b.local_to_ego_rotation().transpose();
    let o = to_local * (origin - b.center());
    let d = to_local * dir;
    let half = b.half_extents();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let t1 = (-half[axis] - o[axis]) / d[axis];
        let t2 = (half[axis] - o[axis]) / d[axis];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    (t_near <= t_far && t_near > 0.0).then_some(t_near)
}

/// Nearest hit along `origin + t * dir`, `t > 0`.
pub fn cast_ray(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, HitKind)> {
    let mut best: Option<(f64, HitKind)> = None;
    if dir.z < 0.0 && origin.z > 0.0 {
        let t = -origin.z / dir.z;
        let p = origin + dir * t;
        if scene.extent.contains(p.x, p.y) {
            best = Some((t, HitKind::Ground));
        }
    }
    for (k, b) in scene.boxes.iter().enumerate() {
        if let Some(t) = ray_box_entry(b, origin, dir) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, HitKind::Box(k)));
            }
        }
    }
    best
}

/// Ground truth for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub kind: HitKind,
    /// Camera-frame z of the hit.
    pub depth: f64,
    /// Ego z of the hit.
    pub height: f64,
    pub point: Vector3<f64>,
}

impl PixelHit {
    fn sky() -> Self {
        Self {
            kind: HitKind::Sky,
            depth: f64::NAN,
            height: f64::NAN,
            point: Vector3::repeat(f64::NAN),
        }
    }
}

/// Casts the ray through pixel `(u, v)`.
pub fn render_pixel(scene: &Scene, rig: &CameraRig, u: f64, v: f64) -> PixelHit {
    // direction scaled so that t is camera depth
    let (origin, dir) = rig.ray(u, v);
    match cast_ray(scene, &origin, &dir) {
        None => PixelHit::sky(),
        Some((t, kind)) => {
            let mut point = origin + dir * t;
            if kind == HitKind::Ground {
                point.z = 0.0;
            }
            PixelHit {
                kind,
                depth: t,
                height: point.z,
                point,
            }
        }
    }
}

/// Rendered ground truth on a pixel grid of the given stride.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMaps {
    pub width: usize,
    pub height: usize,
    pub stride: f64,
    pub hits: Vec<PixelHit>,
}

impl PixelMaps {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, cell: usize) -> (f64, f64) {
        cell_pixel(cell / self.width, cell % self.width, self.stride)
    }

    pub fn depth(&self, cell: usize) -> Option<f64> {
        let h = &self.hits[cell];
        (!h.kind.is_sky()).then_some(h.depth)
    }

    pub fn height_above_ground(&self, cell: usize) -> Option<f64> {
        let h = &self.hits[cell];
        (!h.kind.is_sky()).then_some(h.height)
    }

    pub fn kind(&self, cell: usize) -> HitKind {
        self.hits[cell].kind
    }

    pub fn depths(&self) -> Vec<f64> {
        (0..self.cells()).filter_map(|c| self.depth(c)).collect()
    }

    pub fn heights(&self) -> Vec<f64> {
        (0..self.cells())
            .filter_map(|c| self.height_above_ground(c))
            .collect()
    }

    /// Writes `row,col,u,v,kind,depth,height` with empty values for sky.
    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&Provenance>) -> Result<()> {
        if let Some(p) = provenance {
            p.write_csv_comment(&mut out)?;
        }
        writeln!(out, "row,col,u,v,kind,depth,height")?;
        for (cell, hit) in self.hits.iter().enumerate() {
            let (u, v) = self.pixel(cell);
            write!(
                out,
                "{},{},{u},{v},{}",
                cell / self.width,
                cell % self.width,
                hit.kind.code()
            )?;
            if hit.kind.is_sky() {
                writeln!(out, ",,")?;
            } else {
                writeln!(out, ",{},{}", hit.depth, hit.height)?;
            }
        }
        Ok(())
    }

    /// Binary tensor `[3, height, width]`: depth, height, kind code (NaN
    /// depth/height for sky).
    pub fn write_bin<W: Write>(&self, out: W, provenance: Option<&Provenance>) -> Result<()> {
        let meta = TensorMeta {
            provenance: provenance.cloned(),
            kind: "pixel_maps".into(),
            columns: vec!["depth".into(), "height".into(), "kind".into()],
        };
        let data = self
            .hits
            .iter()
            .map(|h| h.depth as f32)
            .chain(self.hits.iter().map(|h| h.height as f32))
            .chain(self.hits.iter().map(|h| h.kind.code() as f32))
            .collect::<Vec<_>>();
        write_tensor(out, &[3, self.height, self.width], &meta, data)
    }
}

/// Renders ground truth for every `sample_stride`-spaced pixel anchor.
pub fn render(scene: &Scene, rig: &CameraRig, sample_stride: f64) -> Result<PixelMaps> {
    if !(sample_stride > 0.0) {
        return Err(Error::ShapeMismatch(format!(
            "sample stride must be positive, got {sample_stride}"
        )));
    }
    let width = (rig.intrinsics.image_w as f64 / sample_stride).floor() as usize;
    let height = (rig.intrinsics.image_h as f64 / sample_stride).floor() as usize;
    let hits = (0..width * height)
        .into_par_iter()
        .map(|cell| {
            let (u, v) = cell_pixel(cell / width, cell % width, sample_stride);
            render_pixel(scene, rig, u, v)
        })
        .collect();
    Ok(PixelMaps {
        width,
        height,
        stride: sample_stride,
        hits,
    })
}

/// Fixed-width histogram; bin `k` covers `[origin + k w, origin + (k + 1) w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub origin: f64,
    pub counts: Vec<u64>,
    pub min: f64,
    pub max: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn spread(&self) -> f64 {
        self.max - self.min
    }

    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&Provenance>) -> Result<()> {
        if let Some(p) = provenance {
            p.write_csv_comment(&mut out)?;
        }
        writeln!(out, "lower,upper,count")?;
        for (k, c) in self.counts.iter().enumerate() {
            let lo = self.origin + k as f64 * self.bin_width;
            writeln!(out, "{lo},{},{c}", lo + self.bin_width)?;
        }
        Ok(())
    }
}

/// Histogram of finite values; NaN (sky) entries are ignored.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "histogram bin width must be positive, got {bin_width}"
        )));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::EmptyInput);
    }
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let origin = (min / bin_width).floor() * bin_width;
    let n = (((max - origin) / bin_width).floor() as usize) + 1;
    let mut counts = vec![0u64; n];
    for v in finite {
        let k = (((v - origin) / bin_width).floor() as usize).min(n - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        bin_width,
        origin,
        counts,
        min,
        max,
    })
}

/// How predicted distributions deviate from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    OneHotTruth,
    GaussianBinBlur { sigma_bins: f64 },
    Bias { bias_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn one_hot() -> Self {
        Self {
            kind: NoiseKind::OneHotTruth,
            seed: 0,
        }
    }

    pub fn blur(sigma_bins: f64) -> Self {
        Self {
            kind: NoiseKind::GaussianBinBlur { sigma_bins },
            seed: 0,
        }
    }

    pub fn bias(bias_m: f64) -> Self {
        Self {
            kind: NoiseKind::Bias { bias_m },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::GaussianBinBlur { sigma_bins } if !(sigma_bins >= 0.0) => Err(
                Error::InvalidNoise(format!("sigma_bins must be >= 0, got {sigma_bins}")),
            ),
            NoiseKind::Bias { bias_m } if !bias_m.is_finite() => {
                Err(Error::InvalidNoise("bias must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Categorical distribution over `bins` for a pixel whose true value is `truth`.
    pub fn distribution(&self, truth: f64, bins: &BinSpec) -> Result<Vec<f64>> {
        let n = bins.n_bins();
        let mut out = vec![0.0; n];
        match self.kind {
            NoiseKind::OneHotTruth => out[bins.value_to_bin(truth)?] = 1.0,
            NoiseKind::Bias { bias_m } => out[bins.value_to_bin(truth + bias_m)?] = 1.0,
            NoiseKind::GaussianBinBlur { sigma_bins } => {
                let center = bins.value_to_bin(truth)?;
                if sigma_bins == 0.0 {
                    out[center] = 1.0;
                } else {
                    for (j, w) in out.iter_mut().enumerate() {
                        let z = (j as f64 - center as f64) / sigma_bins;
                        *w = (-0.5 * z * z).exp();
                    }
                    let s: f64 = out.iter().sum();
                    out.iter_mut().for_each(|w| *w /= s);
                }
            }
        }
        Ok(out)
    }
}

/// Builds a distribution map from per-cell truths; `None` cells are
/// flagged invalid and get a uniform distribution.
pub fn predict_distribution(
    width: usize,
    height: usize,
    truths: &[Option<f64>],
    bins: &BinSpec,
    noise: &NoiseModel,
) -> Result<DistributionMap> {
    noise.validate()?;
    if truths.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} truths for a {width}x{height} map",
            truths.len()
        )));
    }
    let n = bins.n_bins();
    let per_cell: Vec<Vec<f64>> = truths
        .par_iter()
        .map(|t| match t {
            Some(v) => noise.distribution(*v, bins),
            None => Ok(vec![1.0 / n as f64; n]),
        })
        .collect::<Result<_>>()?;
    let valid = truths.iter().map(Option::is_some).collect();
    DistributionMap::new(width, height, n, per_cell.concat(), valid)
}

/// Height-bin distribution of every rendered pixel.
pub fn predict_height_distribution(
    maps: &PixelMaps,
    bins: &BinSpec,
    noise: &NoiseModel,
) -> Result<DistributionMap> {
    if !bins.strategy().is_height() {
        return Err(Error::WrongStrategy(bins.strategy().to_string()));
    }
    let truths: Vec<Option<f64>> = (0..maps.cells())
        .map(|c| maps.height_above_ground(c))
        .collect();
    predict_distribution(maps.width, maps.height, &truths, bins, noise)
}

/// Depth-bin distribution of every rendered pixel.
pub fn predict_depth_distribution(
    maps: &PixelMaps,
    bins: &BinSpec,
    noise: &NoiseModel,
) -> Result<DistributionMap> {
    if !bins.strategy().is_depth() {
        return Err(Error::WrongStrategy(bins.strategy().to_string()));
    }
    let truths: Vec<Option<f64>> = (0..maps.cells()).map(|c| maps.depth(c)).collect();
    predict_distribution(maps.width, maps.height, &truths, bins, noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Car,
    Bus,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::Bus,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    /// Length, width, height in metres.
    pub fn dimensions(self) -> (f64, f64, f64) {
        match self {
            ObjectClass::Car => (4.5, 1.9, 1.6),
            ObjectClass::Bus => (12.0, 2.5, 3.2),
            ObjectClass::Pedestrian => (0.6, 0.6, 1.7),
            ObjectClass::Cyclist => (1.8, 0.6, 1.7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneTemplate {
    /// Straight road ahead of the camera, traffic along ego x.
    Corridor,
    /// Crossing roads, traffic along both axes.
    Intersection,
}

struct TemplateLayout {
    extent: Extent,
    x_range: (f64, f64),
    y_range: (f64, f64),
    headings: &'static [f64],
}

impl SceneTemplate {
    fn layout(self) -> TemplateLayout {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            SceneTemplate::Corridor => TemplateLayout {
                extent: Extent {
                    x_min: 0.0,
                    x_max: 100.0,
                    y_min: -20.0,
                    y_max: 20.0,
                },
                x_range: (12.0, 90.0),
                y_range: (-10.0, 10.0),
                headings: &[0.0, PI],
            },
            SceneTemplate::Intersection => TemplateLayout {
                extent: Extent {
                    x_min: 0.0,
                    x_max: 90.0,
                    y_min: -40.0,
                    y_max: 40.0,
                },
                x_range: (15.0, 75.0),
                y_range: (-25.0, 25.0),
                headings: &[0.0, FRAC_PI_2, PI, -FRAC_PI_2],
            },
        }
    }
}

/// Class mix used by [`generate_scene`]: cumulative car, bus, pedestrian, cyclist.
const CLASS_WEIGHTS: [(ObjectClass, f64); 4] = [
    (ObjectClass::Car, 0.6),
    (ObjectClass::Bus, 0.1),
    (ObjectClass::Pedestrian, 0.15),
    (ObjectClass::Cyclist, 0.15),
];

const PLACEMENT_ATTEMPTS: usize = 500;
const PLACEMENT_GAP: f64 = 0.5;

/// Generates a deterministic scene of non-overlapping boxes resting on the ground.
pub fn generate_scene(template: SceneTemplate, n_boxes: usize, seed: u64) -> Result<Scene> {
    generate_scene_with_classes(template, n_boxes, seed, &CLASS_WEIGHTS)
}

/// As [`generate_scene`] with an explicit class mix (weights need not sum to 1).
pub fn generate_scene_with_classes(
    template: SceneTemplate,
    n_boxes: usize,
    seed: u64,
    classes: &[(ObjectClass, f64)],
) -> Result<Scene> {
    let total: f64 = classes.iter().map(|(_, w)| w).sum();
    if classes.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidGeometry("class mix has no positive weight".into()));
    }
    let layout = template.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(n_boxes);
    for _ in 0..n_boxes {
        let pick = rng.random_range(0.0..total);
        let mut acc = 0.0;
        let class = classes
            .iter()
            .find(|(_, w)| {
                acc += w;
                pick < acc
            })
            .map_or(classes[classes.len() - 1].0, |(c, _)| *c);
        let (l, w, h) = class.dimensions();
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = rng.random_range(layout.x_range.0..layout.x_range.1);
            let y = rng.random_range(layout.y_range.0..layout.y_range.1);
            let heading = layout.headings[rng.random_range(0..layout.headings.len())];
            let yaw = heading + rng.random_range(-0.15..0.15);
            let candidate = Box3D::new(x, y, h / 2.0, l, w, h, yaw)?;
            let inside = candidate
                .footprint()
                .iter()
                .all(|[px, py]| layout.extent.contains(*px, *py));
            if inside && boxes.iter().all(|b| !footprints_overlap(b, &candidate, PLACEMENT_GAP)) {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(b) => boxes.push(b),
            None => {
                return Err(Error::ExtentTooSmall {
                    placed: boxes.len(),
                    requested: n_boxes,
                })
            }
        }
    }
    Scene::new(boxes, layout.extent, seed)
}

/// Separating-axis test on yaw-rotated footprints, each inflated by `gap / 2`.
pub fn footprints_overlap(a: &Box3D, b: &Box3D, gap: f64) -> bool {
    let inflate = |bx: &Box3D| {
        let mut c = *bx;
        c.l += gap;
        c.w += gap;
        c.footprint()
    };
    let (pa, pb) = (inflate(a), inflate(b));
    let axes = [a.theta, b.theta].into_iter().flat_map(|t| {
        let (s, c) = t.sin_cos();
        [[c, s], [-s, c]]
    });
    for [ax, ay] in axes {
        let proj = |poly: &[[f64; 2]; 4]| {
            poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), [x, y]| {
                let d = x * ax + y * ay;
                (lo.min(d), hi.max(d))
            })
        };
        let (a0, a1) = proj(&pa);
        let (b0, b1) = proj(&pb);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}
