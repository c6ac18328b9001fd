//! Image-to-3D lifting: the height-based projector through the virtual
//! frame, the depth-based baseline, and the context/distribution fusion.
//!
//! Height lifting of pixel `(u, v)` at height `h` above the ground:
//!
//! ```text
//! p_ref_cam  = K^-1 [u, v, 1]^T              (reference plane, depth 1)
//! p_ref_virt = T_cam->virt p_ref_cam
//! p_virt     = (H - h) / y_ref_virt * p_ref_virt
//! p_ego      = T_virt->ego p_virt
//! ```
//!
//! Feature cell `(r, c)` anchors at pixel `((c + 0.5) * stride, (r + 0.5) * stride)`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use std::io::Write;

use crate::binning::BinSpec;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, Intrinsics};
use crate::tensor::{write_tensor, Provenance, TensorMeta};

/// Minimum virtual-frame y of the reference point for a ray to count as
/// descending toward the ground.
pub const HORIZON_EPS: f64 = 1e-6;

/// Tolerance on per-cell distribution normalization.
pub const DIST_SUM_TOL: f64 = 1e-6;

/// Pixel anchor of feature cell `(row, col)`.
#[inline]
pub fn cell_pixel(row: usize, col: usize, stride: f64) -> (f64, f64) {
    ((col as f64 + 0.5) * stride, (row as f64 + 0.5) * stride)
}

/// Per-cell context feature vectors, row-major `[height][width][channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ContextMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "context data has {} values, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::ShapeMismatch("context contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.data[cell * self.channels..(cell + 1) * self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-cell categorical distribution over bins, row-major `[height][width][bins]`.
///
/// Cells flagged invalid (sky) carry a uniform distribution and are skipped
/// by the wedge builders.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionMap {
    width: usize,
    height: usize,
    n_bins: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DistributionMap {
    pub fn new(
        width: usize,
        height: usize,
        n_bins: usize,
        data: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let cells = width * height;
        if n_bins == 0 || data.len() != cells * n_bins || valid.len() != cells {
            return Err(Error::ShapeMismatch(format!(
                "distribution has {} weights and {} flags for {width}x{height}x{n_bins}",
                data.len(),
                valid.len()
            )));
        }
        for (cell, w) in data.chunks_exact(n_bins).enumerate() {
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::ShapeMismatch(format!(
                    "cell {cell} has a negative or non-finite weight"
                )));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > DIST_SUM_TOL {
                return Err(Error::ShapeMismatch(format!(
                    "cell {cell} weights sum to {s}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            n_bins,
            data,
            valid,
        })
    }

    /// Every cell valid and uniform.
    pub fn uniform(width: usize, height: usize, n_bins: usize) -> Self {
        let cells = width * height;
        Self {
            width,
            height,
            n_bins,
            data: vec![1.0 / n_bins as f64; cells * n_bins],
            valid: vec![true; cells],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn weights(&self, cell: usize) -> &[f64] {
        &self.data[cell * self.n_bins..(cell + 1) * self.n_bins]
    }

    pub fn is_valid(&self, cell: usize) -> bool {
        self.valid[cell]
    }

    pub fn valid_cells(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Outer product of context and distribution per cell.
///
/// Stored factored; `value` and `to_dense` expand it on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMap {
    context: ContextMap,
    dist: DistributionMap,
}

pub fn fuse(context: ContextMap, dist: DistributionMap) -> Result<FusedMap> {
    if context.width != dist.width || context.height != dist.height {
        return Err(Error::ShapeMismatch(format!(
            "context is {}x{}, distribution is {}x{}",
            context.width, context.height, dist.width, dist.height
        )));
    }
    Ok(FusedMap { context, dist })
}

impl FusedMap {
    pub fn width(&self) -> usize {
        self.context.width
    }

    pub fn height(&self) -> usize {
        self.context.height
    }

    pub fn n_bins(&self) -> usize {
        self.dist.n_bins
    }

    pub fn channels(&self) -> usize {
        self.context.channels
    }

    pub fn context(&self) -> &ContextMap {
        &self.context
    }

    pub fn distribution(&self) -> &DistributionMap {
        &self.dist
    }

    #[inline]
    pub fn value(&self, cell: usize, bin: usize, channel: usize) -> f64 {
        self.context.cell(cell)[channel] * self.dist.weights(cell)[bin]
    }

    /// Dense `[cell][bin][channel]` tensor.
    pub fn to_dense(&self) -> Vec<f64> {
        let (nb, nc) = (self.n_bins(), self.channels());
        let mut out = Vec::with_capacity(self.context.cells() * nb * nc);
        for cell in 0..self.context.cells() {
            let ctx = self.context.cell(cell);
            for &w in self.dist.weights(cell) {
                out.extend(ctx.iter().map(|c| c * w));
            }
        }
        out
    }

    /// Checks the grid anchors fall inside the image.
    fn check_fits(&self, intrinsics: &Intrinsics, stride: f64) -> Result<()> {
        if !(stride > 0.0) {
            return Err(Error::ShapeMismatch(format!("stride must be positive, got {stride}")));
        }
        if self.width() == 0 || self.height() == 0 {
            return Ok(());
        }
        let (u, v) = cell_pixel(self.height() - 1, self.width() - 1, stride);
        if !intrinsics.contains(u, v) {
            return Err(Error::PixelOutsideImage { u, v });
        }
        Ok(())
    }
}

/// Intermediate values of the height lift, one per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightLiftSteps {
    pub ref_cam: Vector3<f64>,
    pub ref_virt: Vector3<f64>,
    pub scale: f64,
    pub virt: Vector3<f64>,
    pub ego: Vector3<f64>,
}

fn check_pixel(rig: &CameraRig, u: f64, v: f64) -> Result<()> {
    if !rig.intrinsics.contains(u, v) {
        return Err(Error::PixelOutsideImage { u, v });
    }
    Ok(())
}

fn check_height(rig: &CameraRig, h: f64) -> Result<()> {
    if !(h < rig.ground_height()) {
        return Err(Error::AboveCamera {
            h,
            ground_height: rig.ground_height(),
        });
    }
    Ok(())
}

/// Step-by-step height lift, kept separate from the fused kernel in
/// [`HeightProjector`] so the two can be cross-checked.
pub fn lift_pixel_height_steps(u: f64, v: f64, h: f64, rig: &CameraRig) -> Result<HeightLiftSteps> {
    check_pixel(rig, u, v)?;
    check_height(rig, h)?;
    let ref_cam = rig.intrinsics.pixel_to_ref_cam(u, v);
    let ref_virt = rig.cam_to_virt().apply(&ref_cam);
    if !(ref_virt.y > HORIZON_EPS) {
        return Err(Error::HorizonRay(ref_virt.y));
    }
    let scale = (rig.ground_height() - h) / ref_virt.y;
    let virt = ref_virt * scale;
    let ego = rig.frame.virt_to_ego.apply(&virt);
    Ok(HeightLiftSteps {
        ref_cam,
        ref_virt,
        scale,
        virt,
        ego,
    })
}

/// Lifts pixel `(u, v)` to the ego point at height `h` above the ground on its ray.
pub fn lift_pixel_height(u: f64, v: f64, h: f64, rig: &CameraRig) -> Result<Vector3<f64>> {
    check_pixel(rig, u, v)?;
    HeightProjector::new(rig).lift(u, v, h)
}

/// Lifts pixel `(u, v)` to camera depth `d` and returns ego coordinates.
pub fn lift_pixel_depth(u: f64, v: f64, d: f64, rig: &CameraRig) -> Result<Vector3<f64>> {
    check_pixel(rig, u, v)?;
    DepthProjector::new(rig).lift(u, v, d)
}

/// `K^-1` without the principal-point column: maps centered pixels to the
/// reference plane.
fn focal_inverse(k: &Intrinsics) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0 / k.fx, 1.0 / k.fy, 1.0))
}

/// Height lift with the camera-to-virtual rotation and the focal scaling
/// folded into one matrix. Pixels are centered on the principal point
/// before the product, which keeps rays near the image center free of
/// cancellation error.
#[derive(Debug, Clone, Copy)]
pub struct HeightProjector {
    pixel_to_virt: Matrix3<f64>,
    principal: (f64, f64),
    virt_to_ego: Matrix3<f64>,
    center: Vector3<f64>,
    ground_height: f64,
}

impl HeightProjector {
    pub fn new(rig: &CameraRig) -> Self {
        Self {
            pixel_to_virt: rig.frame.cam_to_virt * focal_inverse(&rig.intrinsics),
            principal: (rig.intrinsics.cx, rig.intrinsics.cy),
            virt_to_ego: rig.frame.virt_to_ego.rotation,
            center: rig.frame.virt_to_ego.translation,
            ground_height: rig.ground_height(),
        }
    }

    /// Reference point in the virtual frame.
    #[inline]
    pub fn ref_virt(&self, u: f64, v: f64) -> Vector3<f64> {
        self.pixel_to_virt * Vector3::new(u - self.principal.0, v - self.principal.1, 1.0)
    }

    #[inline]
    pub fn lift_ref(&self, ref_virt: &Vector3<f64>, h: f64) -> Vector3<f64> {
        let scale = (self.ground_height - h) / ref_virt.y;
        self.virt_to_ego * (ref_virt * scale) + self.center
    }

    pub fn lift(&self, u: f64, v: f64, h: f64) -> Result<Vector3<f64>> {
        if !(h < self.ground_height) {
            return Err(Error::AboveCamera {
                h,
                ground_height: self.ground_height,
            });
        }
        let r = self.ref_virt(u, v);
        if !(r.y > HORIZON_EPS) {
            return Err(Error::HorizonRay(r.y));
        }
        Ok(self.lift_ref(&r, h))
    }
}

/// Pinhole depth lift to ego coordinates.
#[derive(Debug, Clone, Copy)]
pub struct DepthProjector {
    pixel_to_ego: Matrix3<f64>,
    principal: (f64, f64),
    center: Vector3<f64>,
}

impl DepthProjector {
    pub fn new(rig: &CameraRig) -> Self {
        Self {
            pixel_to_ego: rig.cam_to_ego().rotation * focal_inverse(&rig.intrinsics),
            principal: (rig.intrinsics.cx, rig.intrinsics.cy),
            center: rig.camera_center(),
        }
    }

    #[inline]
    pub fn direction(&self, u: f64, v: f64) -> Vector3<f64> {
        self.pixel_to_ego * Vector3::new(u - self.principal.0, v - self.principal.1, 1.0)
    }

    pub fn lift(&self, u: f64, v: f64, d: f64) -> Result<Vector3<f64>> {
        if !(d > 0.0) {
            return Err(Error::NonPositiveDepth(d));
        }
        Ok(self.center + self.direction(u, v) * d)
    }
}

/// Borrowed view of one wedge point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WedgePoint<'a> {
    pub position: Vector3<f64>,
    pub weight: f64,
    pub feature: &'a [f64],
}

/// Lifted pseudo points. Features are stored once per source cell and
/// referenced by index, since every bin of a cell shares the same context.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeCloud {
    pub source_rig_id: String,
    channels: usize,
    positions: Vec<Vector3<f64>>,
    weights: Vec<f64>,
    feature_rows: Vec<u32>,
    features: Vec<f64>,
    /// Cells skipped because their ray never reaches the height range.
    pub horizon_skipped: usize,
    /// Cells skipped because the distribution flagged them invalid.
    pub masked_skipped: usize,
}

impl WedgeCloud {
    pub fn empty(source_rig_id: &str, channels: usize) -> Self {
        Self {
            source_rig_id: source_rig_id.to_string(),
            channels,
            positions: Vec::new(),
            weights: Vec::new(),
            feature_rows: Vec::new(),
            features: Vec::new(),
            horizon_skipped: 0,
            masked_skipped: 0,
        }
    }

    /// Builds a cloud where every point owns its feature vector.
    pub fn from_points<'a, I>(source_rig_id: &str, channels: usize, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vector3<f64>, f64, &'a [f64])>,
    {
        let mut cloud = Self::empty(source_rig_id, channels);
        for (p, w, f) in points {
            cloud.push_owned(p, w, f)?;
        }
        Ok(cloud)
    }

    fn push_owned(&mut self, p: Vector3<f64>, w: f64, f: &[f64]) -> Result<()> {
        if f.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "feature has {} channels, cloud has {}",
                f.len(),
                self.channels
            )));
        }
        if !(w >= 0.0) || !p.iter().all(|x| x.is_finite()) {
            return Err(Error::ShapeMismatch("point must be finite with weight >= 0".into()));
        }
        let row = (self.features.len() / self.channels.max(1)) as u32;
        self.features.extend_from_slice(f);
        self.positions.push(p);
        self.weights.push(w);
        self.feature_rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        let row = self.feature_rows[i] as usize;
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    pub fn point(&self, i: usize) -> WedgePoint<'_> {
        WedgePoint {
            position: self.positions[i],
            weight: self.weights[i],
            feature: self.feature(i),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WedgePoint<'_>> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// `self ++ other`, keeping both point orders.
    pub fn concat(&self, other: &WedgeCloud) -> Result<WedgeCloud> {
        if self.channels != other.channels {
            return Err(Error::ShapeMismatch("channel counts differ".into()));
        }
        let row_offset = (self.features.len() / self.channels.max(1)) as u32;
        let mut out = self.clone();
        out.positions.extend_from_slice(&other.positions);
        out.weights.extend_from_slice(&other.weights);
        out.features.extend_from_slice(&other.features);
        out.feature_rows
            .extend(other.feature_rows.iter().map(|r| r + row_offset));
        out.horizon_skipped += other.horizon_skipped;
        out.masked_skipped += other.masked_skipped;
        Ok(out)
    }

    /// Reorders points: output point `k` is input point `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> WedgeCloud {
        let mut out = self.clone();
        out.positions = order.iter().map(|&i| self.positions[i]).collect();
        out.weights = order.iter().map(|&i| self.weights[i]).collect();
        out.feature_rows = order.iter().map(|&i| self.feature_rows[i]).collect();
        out
    }

    /// Per-channel sum of `weight * feature` over all points.
    pub fn weighted_feature_sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.channels];
        for p in self.iter() {
            for (a, f) in acc.iter_mut().zip(p.feature) {
                *a += p.weight * f;
            }
        }
        acc
    }

    /// Writes `x,y,z,weight,f0..f{C-1}` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&Provenance>) -> Result<()> {
        if let Some(p) = provenance {
            p.write_csv_comment(&mut out)?;
        }
        write!(out, "x,y,z,weight")?;
        for c in 0..self.channels {
            write!(out, ",f{c}")?;
        }
        writeln!(out)?;
        for p in self.iter() {
            write!(
                out,
                "{},{},{},{}",
                p.position.x, p.position.y, p.position.z, p.weight
            )?;
            for f in p.feature {
                write!(out, ",{f}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Binary tensor of shape `[n_points, 4 + C]`.
    pub fn write_bin<W: Write>(&self, out: W, provenance: Option<&Provenance>) -> Result<()> {
        let mut columns: Vec<String> = ["x", "y", "z", "weight"].map(String::from).to_vec();
        columns.extend((0..self.channels).map(|c| format!("f{c}")));
        let meta = TensorMeta {
            provenance: provenance.cloned(),
            kind: "wedge_cloud".into(),
            columns,
        };
        let data = self.iter().flat_map(|p| {
            [p.position.x, p.position.y, p.position.z, p.weight]
                .into_iter()
                .chain(p.feature.iter().copied())
                .map(|x| x as f32)
                .collect::<Vec<_>>()
        });
        write_tensor(out, &[self.len(), 4 + self.channels], &meta, data)
    }
}

enum CellLift {
    Masked,
    Horizon,
    Points(Vec<(Vector3<f64>, f64)>),
}

fn assemble(
    fused: &FusedMap,
    rig: &CameraRig,
    per_cell: Vec<CellLift>,
) -> WedgeCloud {
    let mut cloud = WedgeCloud::empty(&rig.id, fused.channels());
    cloud.features = fused.context.data.clone();
    for (cell, lifted) in per_cell.into_iter().enumerate() {
        match lifted {
            CellLift::Masked => cloud.masked_skipped += 1,
            CellLift::Horizon => cloud.horizon_skipped += 1,
            CellLift::Points(points) => {
                for (p, w) in points {
                    cloud.positions.push(p);
                    cloud.weights.push(w);
                    cloud.feature_rows.push(cell as u32);
                }
            }
        }
    }
    cloud
}

fn check_bins(fused: &FusedMap, bins: &BinSpec) -> Result<()> {
    if bins.n_bins() != fused.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "distribution has {} bins, spec has {}",
            fused.n_bins(),
            bins.n_bins()
        )));
    }
    Ok(())
}

/// Lifts every cell at every height bin with positive weight.
///
/// Points come out in row-major cell order, ascending bin. Cells whose
/// ray does not descend toward the ground are skipped and counted.
pub fn build_wedge(
    fused: &FusedMap,
    bins: &BinSpec,
    rig: &CameraRig,
    pixel_stride: f64,
) -> Result<WedgeCloud> {
    if !bins.strategy().is_height() {
        return Err(Error::WrongStrategy(bins.strategy().to_string()));
    }
    check_bins(fused, bins)?;
    fused.check_fits(&rig.intrinsics, pixel_stride)?;
    let heights = bins.representatives();
    if let Some(&h) = heights.iter().find(|&&h| !(h < rig.ground_height())) {
        return Err(Error::AboveCamera {
            h,
            ground_height: rig.ground_height(),
        });
    }
    let proj = HeightProjector::new(rig);
    let width = fused.width();
    let per_cell: Vec<CellLift> = (0..fused.context.cells())
        .into_par_iter()
        .map(|cell| {
            if !fused.dist.is_valid(cell) {
                return CellLift::Masked;
            }
            let (u, v) = cell_pixel(cell / width, cell % width, pixel_stride);
            let r = proj.ref_virt(u, v);
            if !(r.y > HORIZON_EPS) {
                return CellLift::Horizon;
            }
            let points = fused
                .dist
                .weights(cell)
                .iter()
                .zip(&heights)
                .filter(|(w, _)| **w > 0.0)
                .map(|(&w, &h)| (proj.lift_ref(&r, h), w))
                .collect();
            CellLift::Points(points)
        })
        .collect();
    Ok(assemble(fused, rig, per_cell))
}

/// Depth-bin counterpart of [`build_wedge`]; every valid cell is lifted.
pub fn build_wedge_depth(
    fused: &FusedMap,
    bins: &BinSpec,
    rig: &CameraRig,
    pixel_stride: f64,
) -> Result<WedgeCloud> {
    if !bins.strategy().is_depth() {
        return Err(Error::WrongStrategy(bins.strategy().to_string()));
    }
    check_bins(fused, bins)?;
    fused.check_fits(&rig.intrinsics, pixel_stride)?;
    let depths = bins.representatives();
    let proj = DepthProjector::new(rig);
    let center = rig.camera_center();
    let width = fused.width();
    let per_cell: Vec<CellLift> = (0..fused.context.cells())
        .into_par_iter()
        .map(|cell| {
            if !fused.dist.is_valid(cell) {
                return CellLift::Masked;
            }
            let (u, v) = cell_pixel(cell / width, cell % width, pixel_stride);
            let dir = proj.direction(u, v);
            let points = fused
                .dist
                .weights(cell)
                .iter()
                .zip(&depths)
                .filter(|(w, _)| **w > 0.0)
                .map(|(&w, &d)| (center + dir * d, w))
                .collect();
            CellLift::Points(points)
        })
        .collect();
    Ok(assemble(fused, rig, per_cell))
}
