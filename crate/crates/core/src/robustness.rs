//! Extrinsic disturbance studies: rotation offsets along roll and pitch,
//! scatter-overlap between clean and disturbed object statistics, per-object
//! localization error of the height and depth pipelines, and the closed-form
//! height-error law.

use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::binning::BinSpec;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, Extrinsics};
use crate::lifting::{DepthProjector, HeightProjector, HORIZON_EPS};
use crate::scene::{predict_distribution, render, HitKind, NoiseModel, Scene};
use crate::tensor::Provenance;

/// Default standard deviation of the roll and pitch offsets, degrees.
pub const DEFAULT_SIGMA_DEG: f64 = 1.67;

/// Rotates the camera about its own optical (roll) and lateral (pitch)
/// axes. The camera center stays where it is.
pub fn perturb_extrinsics(extrinsics: &Extrinsics, roll_deg: f64, pitch_deg: f64) -> Extrinsics {
    let roll = Rotation3::from_axis_angle(&Vector3::z_axis(), roll_deg.to_radians());
    let pitch = Rotation3::from_axis_angle(&Vector3::x_axis(), pitch_deg.to_radians());
    let rotation = roll.matrix() * pitch.matrix() * extrinsics.rotation;
    let center = extrinsics.camera_center();
    Extrinsics {
        rotation,
        translation: -(rotation * center),
    }
}

/// Rig with perturbed extrinsics.
pub fn perturb_rig(rig: &CameraRig, roll_deg: f64, pitch_deg: f64) -> Result<CameraRig> {
    rig.with_extrinsics(perturb_extrinsics(&rig.extrinsics, roll_deg, pitch_deg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(default = "default_sigma")]
    pub sigma_roll_deg: f64,
    #[serde(default = "default_sigma")]
    pub sigma_pitch_deg: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA_DEG
}

fn default_trials() -> usize {
    100
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            sigma_roll_deg: DEFAULT_SIGMA_DEG,
            sigma_pitch_deg: DEFAULT_SIGMA_DEG,
            seed: 0,
            n_trials: 100,
        }
    }
}

impl DisturbanceSpec {
    pub fn new(sigma_deg: f64, seed: u64, n_trials: usize) -> Self {
        Self {
            sigma_roll_deg: sigma_deg,
            sigma_pitch_deg: sigma_deg,
            seed,
            n_trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_roll_deg >= 0.0 && self.sigma_pitch_deg >= 0.0) {
            return Err(Error::InvalidDisturbance("sigmas must be >= 0".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidDisturbance("n_trials must be >= 1".into()));
        }
        Ok(())
    }

    /// Roll and pitch of one trial. Each trial draws from its own ChaCha
    /// stream, so trial `k` does not depend on any other trial.
    pub fn trial(&self, k: usize) -> Result<(f64, f64)> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        let roll = Normal::new(0.0, self.sigma_roll_deg)
            .map_err(|e| Error::InvalidDisturbance(e.to_string()))?;
        let pitch = Normal::new(0.0, self.sigma_pitch_deg)
            .map_err(|e| Error::InvalidDisturbance(e.to_string()))?;
        Ok((roll.sample(&mut rng), pitch.sample(&mut rng)))
    }
}

/// `n_trials` independent (roll, pitch) pairs in degrees.
pub fn sample_disturbances(spec: &DisturbanceSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    (0..spec.n_trials).map(|k| spec.trial(k)).collect()
}

/// Where an object's center shows up in a camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectObservation {
    pub object: usize,
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth of the box center.
    pub depth: f64,
    /// Height of the box center above the ground.
    pub height: f64,
}

/// Objects whose center projects into the image in front of the camera.
pub fn observe_objects(scene: &Scene, rig: &CameraRig) -> Vec<ObjectObservation> {
    scene
        .boxes
        .iter()
        .enumerate()
        .filter_map(|(object, b)| {
            let c = b.center();
            let (u, v, depth) = rig.project(&c)?;
            rig.intrinsics.contains(u, v).then_some(ObjectObservation {
                object,
                u,
                v,
                depth,
                height: c.z,
            })
        })
        .collect()
}

/// Histogram bin sizes for the scatter-overlap metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapBins {
    pub v_px: f64,
    pub depth_m: f64,
    pub height_m: f64,
}

impl Default for OverlapBins {
    fn default() -> Self {
        Self {
            v_px: 16.0,
            depth_m: 2.0,
            height_m: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub trial: usize,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub overlap_depth: f64,
    pub overlap_height: f64,
    pub n_points: usize,
    pub bins: OverlapBins,
}

/// Intersection of two normalized 2D histograms built from `(v, value)` pairs.
///
/// Each point is spread over its four nearest bin centers with bilinear
/// (cloud-in-cell) weights, so the overlap moves continuously with the
/// points instead of jumping at bin borders.
pub fn histogram_intersection(a: &[(f64, f64)], b: &[(f64, f64)], v_bin: f64, value_bin: f64) -> f64 {
    fn hist(points: &[(f64, f64)], v_bin: f64, value_bin: f64) -> BTreeMap<(i64, i64), f64> {
        let mut h = BTreeMap::new();
        let w = 1.0 / points.len() as f64;
        for (v, x) in points {
            let (gv, gx) = (v / v_bin - 0.5, x / value_bin - 0.5);
            let (iv, ix) = (gv.floor(), gx.floor());
            let (fv, fx) = (gv - iv, gx - ix);
            for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let cw = w * wv * wx;
                    if cw > 0.0 {
                        *h.entry((iv as i64 + dv, ix as i64 + dx)).or_insert(0.0) += cw;
                    }
                }
            }
        }
        h
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (ha, hb) = (hist(a, v_bin, value_bin), hist(b, v_bin, value_bin));
    let s: f64 = ha
        .iter()
        .filter_map(|(k, pa)| hb.get(k).map(|pb| pa.min(*pb)))
        .sum();
    s.clamp(0.0, 1.0)
}

/// Overlap of the clean and disturbed `(v, depth)` and `(v, height)` scatter sets.
pub fn scatter_overlap_trial(
    scene: &Scene,
    rig: &CameraRig,
    roll_deg: f64,
    pitch_deg: f64,
    bins: &OverlapBins,
) -> Result<(f64, f64, usize)> {
    let clean = observe_objects(scene, rig);
    if clean.is_empty() {
        return Err(Error::NoVisibleObjects);
    }
    let disturbed = observe_objects(scene, &perturb_rig(rig, roll_deg, pitch_deg)?);
    let pairs = |obs: &[ObjectObservation], depth: bool| -> Vec<(f64, f64)> {
        obs.iter()
            .map(|o| (o.v, if depth { o.depth } else { o.height }))
            .collect()
    };
    let overlap_depth = histogram_intersection(
        &pairs(&clean, true),
        &pairs(&disturbed, true),
        bins.v_px,
        bins.depth_m,
    );
    let overlap_height = histogram_intersection(
        &pairs(&clean, false),
        &pairs(&disturbed, false),
        bins.v_px,
        bins.height_m,
    );
    Ok((overlap_depth, overlap_height, clean.len()))
}

/// One [`OverlapReport`] per sampled disturbance.
pub fn scatter_overlap(
    scene: &Scene,
    rig: &CameraRig,
    spec: &DisturbanceSpec,
    bins: &OverlapBins,
) -> Result<Vec<OverlapReport>> {
    if scene.boxes.is_empty() || observe_objects(scene, rig).is_empty() {
        return Err(Error::NoVisibleObjects);
    }
    let draws = sample_disturbances(spec)?;
    draws
        .par_iter()
        .enumerate()
        .map(|(trial, &(roll, pitch))| {
            let (overlap_depth, overlap_height, n_points) =
                scatter_overlap_trial(scene, rig, roll, pitch, bins)?;
            Ok(OverlapReport {
                trial,
                roll_deg: roll,
                pitch_deg: pitch,
                overlap_depth,
                overlap_height,
                n_points,
                bins: *bins,
            })
        })
        .collect()
}

/// Signed ground-range error of a height lift when the height is
/// mispredicted by `delta_h`: `d * delta_h / (H - h)`. Positive means the
/// lifted point lands closer to the camera.
pub fn height_error_law(d_ground_range: f64, delta_h: f64, camera_height: f64, h: f64) -> Result<f64> {
    if !(d_ground_range > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "ground range must be positive, got {d_ground_range}"
        )));
    }
    if !(camera_height > h + delta_h && camera_height > h) {
        return Err(Error::InvalidGeometry(format!(
            "camera height {camera_height} must exceed h + delta_h = {}",
            h + delta_h
        )));
    }
    Ok(d_ground_range * delta_h / (camera_height - h))
}

/// Horizontal distance from the camera's ground projection.
pub fn ground_range(rig: &CameraRig, p: &Vector3<f64>) -> f64 {
    let c = rig.camera_center();
    ((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt()
}

/// Lifts `(u, v)` at `h` and at `h + delta_h`; returns the true ground range
/// and the signed range change `range(h) - range(h + delta_h)`.
pub fn simulate_height_bias(
    rig: &CameraRig,
    u: f64,
    v: f64,
    h: f64,
    delta_h: f64,
) -> Result<(f64, f64)> {
    let proj = HeightProjector::new(rig);
    let truth = proj.lift(u, v, h)?;
    let biased = proj.lift(u, v, h + delta_h)?;
    let d = ground_range(rig, &truth);
    Ok((d, d - ground_range(rig, &biased)))
}

/// Which lifting path produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Height,
    Depth,
}

impl Parameterization {
    pub fn name(self) -> &'static str {
        match self {
            Parameterization::Height => "height",
            Parameterization::Depth => "depth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterError {
    /// |dist(estimate, camera) - dist(reference, camera)|
    pub distance_error: f64,
    /// |estimate - reference|
    pub offset: f64,
    /// |ground_range(estimate) - ground_range(reference)|
    pub ground_range_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectError {
    pub object: usize,
    pub n_pixels: usize,
    /// Camera-origin distance of the reference center.
    pub reference_distance: f64,
    pub height: CenterError,
    pub depth: CenterError,
}

impl ObjectError {
    pub fn get(&self, p: Parameterization) -> &CenterError {
        match p {
            Parameterization::Height => &self.height,
            Parameterization::Depth => &self.depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

/// Mean, median and 90th percentile (nearest-rank) of non-empty data.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let rank = ((0.9 * n as f64).ceil() as usize).clamp(1, n);
    Some(Summary {
        count: n,
        mean: v.iter().sum::<f64>() / n as f64,
        median,
        p90: v[rank - 1],
    })
}

/// Per-object localization errors for one disturbance condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub camera_height: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub disturbed: bool,
    pub noise: NoiseModel,
    pub objects: Vec<ObjectError>,
    /// Objects skipped because their ground contact is above the clean horizon.
    pub skipped_objects: usize,
}

impl ErrorReport {
    pub fn distance_errors(&self, p: Parameterization) -> Vec<f64> {
        self.objects.iter().map(|o| o.get(p).distance_error).collect()
    }

    pub fn summary(&self, p: Parameterization) -> Option<Summary> {
        summarize(&self.distance_errors(p))
    }
}

/// Settings for [`localization_error`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSetup<'a> {
    pub height_bins: &'a BinSpec,
    pub depth_bins: &'a BinSpec,
    pub noise: &'a NoiseModel,
    /// Pixel stride of the rendered ground truth.
    pub stride: f64,
}

/// Camera depth at which the clean rig's ray through `(u, v)` meets the
/// ground, i.e. what a predictor calibrated on the clean rig reads off the
/// image row of a ground contact point.
fn clean_ground_depth(rig: &CameraRig, u: f64, v: f64) -> Option<f64> {
    let (o, d) = rig.ray(u, v);
    (d.z < -HORIZON_EPS).then(|| -o.z / d.z)
}

/// Renders the scene from the (optionally disturbed) rig, predicts height
/// and depth distributions for every object pixel, lifts them with the
/// rig that took the image, and compares each object's weighted centroid
/// with the centroid of its true surface points.
///
/// Height predictions are conditioned on the true height of each surface
/// point, which does not depend on the camera. Depth predictions are
/// conditioned on the true depth plus the shift a predictor calibrated on
/// the clean rig makes when it reads range from the image row of the
/// object's ground contact point: `D_clean(u_c, v_c) - D_observed(u_c, v_c)`.
/// Without disturbance the shift is zero and both paths see the truth.
pub fn localization_error(
    scene: &Scene,
    rig: &CameraRig,
    setup: &LocalizationSetup<'_>,
    disturbance: Option<(f64, f64)>,
) -> Result<ErrorReport> {
    let (roll, pitch) = disturbance.unwrap_or((0.0, 0.0));
    let observed = match disturbance {
        Some((r, p)) => perturb_rig(rig, r, p)?,
        None => rig.clone(),
    };
    let maps = render(scene, &observed, setup.stride)?;

    // depth shift per object from the clean-rig row prior
    let mut shift: Vec<Option<f64>> = vec![Some(0.0); scene.boxes.len()];
    if disturbance.is_some() {
        for (k, b) in scene.boxes.iter().enumerate() {
            let contact = Vector3::new(b.x, b.y, 0.0);
            shift[k] = observed.project(&contact).and_then(|(u, v, d_obs)| {
                clean_ground_depth(rig, u, v).map(|d_clean| d_clean - d_obs)
            });
        }
    }

    let dmin = setup.depth_bins.range_min();
    let dmax = setup.depth_bins.range_max();
    let mut height_truth = vec![None; maps.cells()];
    let mut depth_pred = vec![None; maps.cells()];
    let mut pixels_of: Vec<Vec<usize>> = vec![Vec::new(); scene.boxes.len()];
    for cell in 0..maps.cells() {
        if let HitKind::Box(k) = maps.kind(cell) {
            let Some(s) = shift[k] else { continue };
            let hit = &maps.hits[cell];
            height_truth[cell] = Some(hit.height);
            // a classifier can only answer inside its bin range
            depth_pred[cell] = Some((hit.depth + s).clamp(dmin, dmax));
            pixels_of[k].push(cell);
        }
    }
    let skipped_objects = shift.iter().filter(|s| s.is_none()).count();

    let hdist = predict_distribution(maps.width, maps.height, &height_truth, setup.height_bins, setup.noise)?;
    let ddist = predict_distribution(maps.width, maps.height, &depth_pred, setup.depth_bins, setup.noise)?;
    let heights = setup.height_bins.representatives();
    let depths = setup.depth_bins.representatives();
    let hproj = HeightProjector::new(&observed);
    let dproj = DepthProjector::new(&observed);
    let center = observed.camera_center();

    let objects = pixels_of
        .par_iter()
        .enumerate()
        .filter(|(_, cells)| !cells.is_empty())
        .map(|(k, cells)| {
            let mut reference = Vector3::zeros();
            let (mut hsum, mut hw) = (Vector3::zeros(), 0.0);
            let (mut dsum, mut dw) = (Vector3::zeros(), 0.0);
            for &cell in cells {
                reference += maps.hits[cell].point;
                let (u, v) = maps.pixel(cell);
                let r = hproj.ref_virt(u, v);
                if !(r.y > HORIZON_EPS) {
                    return Err(Error::HorizonRay(r.y));
                }
                for (&w, &h) in hdist.weights(cell).iter().zip(&heights) {
                    if w > 0.0 {
                        hsum += hproj.lift_ref(&r, h) * w;
                        hw += w;
                    }
                }
                let dir = dproj.direction(u, v);
                for (&w, &d) in ddist.weights(cell).iter().zip(&depths) {
                    if w > 0.0 {
                        dsum += (center + dir * d) * w;
                        dw += w;
                    }
                }
            }
            let reference = reference / cells.len() as f64;
            let err = |est: Vector3<f64>| CenterError {
                distance_error: ((est - center).norm() - (reference - center).norm()).abs(),
                offset: (est - reference).norm(),
                ground_range_error: (ground_range(&observed, &est)
                    - ground_range(&observed, &reference))
                .abs(),
            };
            Ok(ObjectError {
                object: k,
                n_pixels: cells.len(),
                reference_distance: (reference - center).norm(),
                height: err(hsum / hw),
                depth: err(dsum / dw),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ErrorReport {
        camera_height: rig.ground_height(),
        roll_deg: roll,
        pitch_deg: pitch,
        disturbed: disturbance.is_some(),
        noise: *setup.noise,
        objects,
        skipped_objects,
    })
}

/// Clean reference run plus one disturbed run per sampled trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStudy {
    pub clean: ErrorReport,
    pub trials: Vec<ErrorReport>,
}

impl ErrorStudy {
    /// Distance errors pooled over all disturbed trials.
    pub fn pooled(&self, p: Parameterization) -> Vec<f64> {
        self.trials
            .iter()
            .flat_map(|t| t.distance_errors(p))
            .collect()
    }
}

pub fn localization_study(
    scene: &Scene,
    rig: &CameraRig,
    setup: &LocalizationSetup<'_>,
    spec: &DisturbanceSpec,
) -> Result<ErrorStudy> {
    let draws = sample_disturbances(spec)?;
    let clean = localization_error(scene, rig, setup, None)?;
    let trials = draws
        .par_iter()
        .map(|&d| localization_error(scene, rig, setup, Some(d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorStudy { clean, trials })
}

/// Long-format rows `trial,object,parameterization,metric,value`.
pub fn write_long_csv<W: Write>(
    mut out: W,
    overlaps: &[OverlapReport],
    study: &ErrorStudy,
    provenance: Option<&Provenance>,
) -> Result<()> {
    if let Some(p) = provenance {
        p.write_csv_comment(&mut out)?;
    }
    writeln!(out, "trial,object,parameterization,metric,value")?;
    for r in overlaps {
        writeln!(out, "{},,,roll_deg,{}", r.trial, r.roll_deg)?;
        writeln!(out, "{},,,pitch_deg,{}", r.trial, r.pitch_deg)?;
        writeln!(out, "{},,depth,overlap,{}", r.trial, r.overlap_depth)?;
        writeln!(out, "{},,height,overlap,{}", r.trial, r.overlap_height)?;
    }
    let runs = std::iter::once(("clean".to_string(), &study.clean)).chain(
        study
            .trials
            .iter()
            .enumerate()
            .map(|(k, t)| (k.to_string(), t)),
    );
    for (trial, report) in runs {
        for o in &report.objects {
            for p in [Parameterization::Height, Parameterization::Depth] {
                let e = o.get(p);
                let name = p.name();
                writeln!(out, "{trial},{},{name},distance_error,{}", o.object, e.distance_error)?;
                writeln!(out, "{trial},{},{name},offset,{}", o.object, e.offset)?;
                writeln!(
                    out,
                    "{trial},{},{name},ground_range_error,{}",
                    o.object, e.ground_range_error
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{default_rig, rig_at_height};
    use crate::scene::{generate_scene, SceneTemplate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_perturbation_is_identity() {
        let e = default_rig().extrinsics;
        let p = perturb_extrinsics(&e, 0.0, 0.0);
        assert!((p.rotation - e.rotation).abs().max() < 1e-15);
        assert!((p.translation - e.translation).abs().max() < 1e-12);
    }

    #[test]
    fn roll_undoes_itself() {
        let e = default_rig().extrinsics;
        let back = perturb_extrinsics(&perturb_extrinsics(&e, 2.0, 0.0), -2.0, 0.0);
        assert!((back.rotation - e.rotation).abs().max() < 1e-12);
        assert!((back.translation - e.translation).abs().max() < 1e-12);
    }

    #[test]
    fn perturbation_keeps_rotation_and_center() {
        let rig = default_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = perturb_extrinsics(
                &rig.extrinsics,
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let r = p.rotation;
            assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            assert!((p.camera_center() - rig.camera_center()).norm() < 1e-12);
            assert!(Extrinsics::new(p.rotation, p.translation).is_ok());
        }
    }

    #[test]
    fn one_degree_pitch_moves_the_optical_axis_one_degree() {
        let rig = default_rig();
        let p = perturb_extrinsics(&rig.extrinsics, 1.0, 1.0);
        let a = rig.extrinsics.optical_axis();
        let b = p.optical_axis();
        // roll leaves the optical axis alone, so only pitch tilts it
        assert!((a.angle(&b).to_degrees() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disturbance_sampling() {
        let zero = sample_disturbances(&DisturbanceSpec::new(0.0, 4, 10)).unwrap();
        assert!(zero.iter().all(|&(r, p)| r == 0.0 && p == 0.0));
        assert_eq!(DisturbanceSpec::default().sigma_pitch_deg, 1.67);

        let spec = DisturbanceSpec::new(1.67, 42, 10_000);
        let draws = sample_disturbances(&spec).unwrap();
        for pick in [|d: &(f64, f64)| d.0, |d: &(f64, f64)| d.1] {
            let xs: Vec<f64> = draws.iter().map(pick).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((var.sqrt() - 1.67).abs() < 0.03 * 1.67, "std {}", var.sqrt());
        }
        // trial k does not depend on how many trials were drawn
        let short = sample_disturbances(&DisturbanceSpec::new(1.67, 42, 5)).unwrap();
        assert_eq!(&draws[..5], &short[..]);
        assert!(DisturbanceSpec::new(1.0, 0, 0).validate().is_err());
        assert!(DisturbanceSpec::new(-1.0, 0, 1).validate().is_err());
    }

    #[test]
    fn overlap_is_one_without_disturbance() {
        let scene = generate_scene(SceneTemplate::Corridor, 20, 7).unwrap();
        let rig = default_rig();
        let reports = scatter_overlap(&scene, &rig, &DisturbanceSpec::new(0.0, 1, 3), &OverlapBins::default()).unwrap();
        for r in reports {
            assert!((r.overlap_depth - 1.0).abs() < 1e-12);
            assert!((r.overlap_height - 1.0).abs() < 1e-12);
        }
        let empty = Scene::empty(scene.extent);
        assert!(matches!(
            scatter_overlap(&empty, &rig, &DisturbanceSpec::default(), &OverlapBins::default()),
            Err(Error::NoVisibleObjects)
        ));
    }

    #[test]
    fn heights_of_objects_ignore_the_rig_but_depths_do_not() {
        let scene = generate_scene(SceneTemplate::Corridor, 20, 7).unwrap();
        let rig = default_rig();
        let disturbed = perturb_rig(&rig, 0.0, 1.0).unwrap();
        let a = observe_objects(&scene, &rig);
        let b = observe_objects(&scene, &disturbed);
        let mut matched = 0;
        for oa in &a {
            if let Some(ob) = b.iter().find(|o| o.object == oa.object) {
                matched += 1;
                assert!((oa.height - ob.height).abs() <= 1e-6);
                assert!((oa.depth - ob.depth).abs() > 0.0);
            }
        }
        assert!(matched > 0);
    }

    #[test]
    fn histogram_intersection_basics() {
        let a = [(10.0, 1.0), (40.0, 3.0)];
        assert!((histogram_intersection(&a, &a, 16.0, 1.0) - 1.0).abs() < 1e-12);
        let b = [(10.0, 1.0), (200.0, 3.0)];
        // half a bin in v keeps half of a point's mass in place
        let c = [(8.0, 0.5)];
        let d = [(16.0, 0.5)];
        assert!((histogram_intersection(&c, &d, 16.0, 1.0) - 0.5).abs() < 1e-12);
        assert!((histogram_intersection(&a, &b, 16.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(histogram_intersection(&a, &[], 16.0, 1.0), 0.0);
    }

    #[test]
    #[allow(clippy::approx_constant)] // a 3.14 m pole, not pi
    fn error_law_examples() {
        assert_eq!(height_error_law(30.0, 0.0, 5.0, 0.0).unwrap(), 0.0);
        let e_truck = height_error_law(30.0, 0.1, 3.14, 0.0).unwrap();
        let e_pole = height_error_law(30.0, 0.1, 5.0, 0.0).unwrap();
        assert!(e_truck > e_pole);
        assert!((e_truck / e_pole - 5.0 / 3.14).abs() < 1e-9);
        assert!(height_error_law(30.0, 0.5, 1.0, 0.6).is_err());
        assert!(height_error_law(0.0, 0.1, 5.0, 0.0).is_err());
    }

    #[test]
    fn biased_lift_follows_the_law() {
        let rig = default_rig();
        let (d, err) = simulate_height_bias(&rig, 900.0, 600.0, 0.0, 0.1).unwrap();
        let law = height_error_law(d, 0.1, 5.0, 0.0).unwrap();
        assert!((err - law).abs() <= 1e-6 * law.abs());
    }

    #[test]
    fn simulated_error_shrinks_with_camera_height() {
        // ground point 30 m ahead seen from increasing heights
        let mut prev = f64::INFINITY;
        for i in 0..8 {
            let h_cam = 2.0 + i as f64;
            let rig = rig_at_height(h_cam, 0.2);
            let (u, v, _) = rig.project(&Vector3::new(30.0, 2.0, 0.5)).unwrap();
            let (d, err) = simulate_height_bias(&rig, u, v, 0.5, 0.1).unwrap();
            assert!((d - (30.0f64.powi(2) + 4.0).sqrt()).abs() < 1e-9);
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.p90, 10.0);
        assert!(summarize(&[]).is_none());
    }

    fn setup_bins() -> (BinSpec, BinSpec) {
        (
            BinSpec::uniform(90, -1.0, 4.0).unwrap(),
            BinSpec::default_depth(),
        )
    }

    #[test]
    fn noiseless_error_is_bounded_by_quantization() {
        let scene = generate_scene(SceneTemplate::Corridor, 20, 7).unwrap();
        let rig = default_rig();
        let (hb, db) = setup_bins();
        let noise = NoiseModel::one_hot();
        let setup = LocalizationSetup {
            height_bins: &hb,
            depth_bins: &db,
            noise: &noise,
            stride: 8.0,
        };
        let report = localization_error(&scene, &rig, &setup, None).unwrap();
        assert!(!report.objects.is_empty());
        let maps = render(&scene, &rig, 8.0).unwrap();
        let proj = HeightProjector::new(&rig);
        for o in &report.objects {
            // worst pixel: half a bin of height error times the lift scale
            let bound = (0..maps.cells())
                .filter(|&c| maps.kind(c) == HitKind::Box(o.object))
                .map(|c| {
                    let (u, v) = maps.pixel(c);
                    let r = proj.ref_virt(u, v);
                    0.5 * hb.width(0) * r.norm() / r.y
                })
                .fold(0.0, f64::max);
            assert!(o.height.distance_error <= bound + 1e-9);
            assert!(o.height.offset <= bound + 1e-9);
            assert!(o.depth.offset <= 0.5 * db.width(0) * 1.5);
        }
    }

    #[test]
    fn bias_shows_up_as_law_error() {
        // 0.1 m bias on ground pixels at H = 5 m
        let rig = default_rig();
        let (d, err) = simulate_height_bias(&rig, 768.0, 500.0, 0.0, 0.1).unwrap();
        assert!((err - d * 0.1 / 5.0).abs() <= 1e-6 * err);
    }
}
