//! Camera models, rigid transforms and the ground-aligned virtual frame.
//!
//! Frames:
//! - ego: z up, ground plane at z = 0.
//! - camera: x right, y down, z along the optical axis.
//! - virtual: origin at the camera center, +Y pointing down along the ground
//!   normal, +Z along the optical axis projected onto the ground plane.
//!
//! Extrinsics map ego to camera: `p_cam = R * p_ego + t`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Pixel-space pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRaw")]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: u32,
    pub image_h: u32,
}

#[derive(Deserialize)]
struct IntrinsicsRaw {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    image_w: u32,
    image_h: u32,
}

impl TryFrom<IntrinsicsRaw> for Intrinsics {
    type Error = Error;
    fn try_from(r: IntrinsicsRaw) -> Result<Self> {
        Intrinsics::new(r.fx, r.fy, r.cx, r.cy, r.image_w, r.image_h)
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image_w: u32, image_h: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx >= 0.0 && cx < image_w as f64 && cy >= 0.0 && cy < image_h as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {image_w}x{image_h} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            image_w,
            image_h,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Half-open image bounds `[0, w) x [0, h)`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.image_w as f64 && v < self.image_h as f64
    }

    /// Back-projects a pixel onto the reference plane at camera depth 1.
    ///
    /// The returned point is `K^-1 [u, v, 1]^T`; its third component is exactly 1.
    pub fn pixel_to_ref_cam(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point with positive depth to pixel coordinates.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<(f64, f64)> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }
}

/// Rotation plus translation, `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Ego-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExtrinsicsRaw", into = "ExtrinsicsRaw")]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Row-major JSON form of [`Extrinsics`].
#[derive(Serialize, Deserialize)]
struct ExtrinsicsRaw {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<ExtrinsicsRaw> for Extrinsics {
    type Error = Error;
    fn try_from(r: ExtrinsicsRaw) -> Result<Self> {
        let m = &r.rotation;
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Extrinsics::new(rotation, Vector3::from(r.translation))
    }
}

impl From<Extrinsics> for ExtrinsicsRaw {
    fn from(e: Extrinsics) -> Self {
        let r = &e.rotation;
        ExtrinsicsRaw {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [e.translation.x, e.translation.y, e.translation.z],
        }
    }
}

const ROTATION_TOL: f64 = 1e-9;

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(err <= ROTATION_TOL) {
            return Err(Error::InvalidExtrinsics(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidExtrinsics(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidExtrinsics("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds extrinsics for a camera at `position` (ego), looking along
    /// heading `yaw` (about ego z, 0 = +x), tilted down by `pitch_down` and
    /// rolled by `roll` about its optical axis. Angles in radians.
    pub fn from_pose(position: Vector3<f64>, yaw: f64, pitch_down: f64, roll: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch_down.sin_cos();
        let forward = Vector3::new(cy * cp, sy * cp, -sp);
        let right0 = Vector3::new(sy, -cy, 0.0);
        let down0 = forward.cross(&right0);
        let (sr, cr) = roll.sin_cos();
        let right = right0 * cr + down0 * sr;
        let down = down0 * cr - right0 * sr;
        let cam_to_ego = Matrix3::from_columns(&[right, down, forward]);
        let rotation = cam_to_ego.transpose();
        Self {
            rotation,
            translation: -(rotation * position),
        }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }

    /// Camera center in ego coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis (camera +z) expressed in ego coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

/// The ground-aligned virtual frame of a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualFrame {
    /// Pure rotation taking camera coordinates to virtual coordinates.
    pub cam_to_virt: Matrix3<f64>,
    pub virt_to_ego: RigidTransform,
    /// Distance from the camera center to the ground along the normal.
    pub ground_height: f64,
}

/// Angle below which the optical axis counts as parallel to the ground normal.
pub const DEGENERATE_AXIS_RAD: f64 = 1e-6;

/// Constructs the virtual frame: origin at the camera center, +Y along
/// `-ground_normal_ego`, +Z along the optical axis projected onto the ground
/// plane, +X = Y x Z. The ground plane passes through the ego origin.
pub fn build_virtual_frame(
    extrinsics: &Extrinsics,
    ground_normal_ego: &Vector3<f64>,
) -> Result<VirtualFrame> {
    let n_norm = ground_normal_ego.norm();
    if !((n_norm - 1.0).abs() <= 1e-9) {
        return Err(Error::InvalidGeometry(format!(
            "ground normal must be unit length, got norm {n_norm}"
        )));
    }
    let n = *ground_normal_ego;
    let center = extrinsics.camera_center();
    let ground_height = n.dot(&center);
    if !(ground_height > 0.0) {
        return Err(Error::CameraBelowGround(ground_height));
    }

    let axis = extrinsics.optical_axis();
    let horizontal = axis - n * axis.dot(&n);
    // |horizontal| = sin(angle between axis and normal).
    if horizontal.norm() <= DEGENERATE_AXIS_RAD.sin() {
        return Err(Error::DegenerateOrientation);
    }
    let z_axis = horizontal.normalize();
    let y_axis = -n;
    let x_axis = y_axis.cross(&z_axis);
    let virt_to_ego_rot = Matrix3::from_columns(&[x_axis, y_axis, z_axis]);

    let cam_to_virt = virt_to_ego_rot.transpose() * extrinsics.rotation.transpose();
    Ok(VirtualFrame {
        cam_to_virt,
        virt_to_ego: RigidTransform::new(virt_to_ego_rot, center),
        ground_height,
    })
}

/// Intrinsics, extrinsics and the derived virtual frame for one camera.
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub frame: VirtualFrame,
    cam_to_ego: RigidTransform,
}

/// Ego z-up ground normal.
pub const GROUND_NORMAL: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

impl CameraRig {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Result<Self> {
        Self::with_id("rig", intrinsics, extrinsics)
    }

    pub fn with_id(id: &str, intrinsics: Intrinsics, extrinsics: Extrinsics) -> Result<Self> {
        let frame = build_virtual_frame(&extrinsics, &GROUND_NORMAL)?;
        Ok(Self {
            id: id.to_string(),
            intrinsics,
            cam_to_ego: extrinsics.to_transform().inverse(),
            extrinsics,
            frame,
        })
    }

    /// Same intrinsics and id with different extrinsics.
    pub fn with_extrinsics(&self, extrinsics: Extrinsics) -> Result<Self> {
        Self::with_id(&self.id, self.intrinsics, extrinsics)
    }

    pub fn ground_height(&self) -> f64 {
        self.frame.ground_height
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.frame.virt_to_ego.translation
    }

    pub fn cam_to_ego(&self) -> &RigidTransform {
        &self.cam_to_ego
    }

    /// Camera-to-virtual as a rigid transform (zero translation).
    pub fn cam_to_virt(&self) -> RigidTransform {
        RigidTransform::from_rotation(self.frame.cam_to_virt)
    }

    /// Ray through a pixel, in ego coordinates. The direction is scaled so
    /// that the ray parameter equals camera-frame depth.
    pub fn ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = self.intrinsics.pixel_to_ref_cam(u, v);
        (
            self.camera_center(),
            self.cam_to_ego.rotation * dir_cam,
        )
    }

    /// Projects an ego point to `(u, v, depth)`; `None` behind the camera.
    /// The pixel may fall outside the image.
    pub fn project(&self, p_ego: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p_cam = self.extrinsics.to_transform().apply(p_ego);
        self.intrinsics
            .project(&p_cam)
            .map(|(u, v)| (u, v, p_cam.z))
    }

    /// Camera-frame depth of an ego point.
    pub fn depth_of(&self, p_ego: &Vector3<f64>) -> f64 {
        self.extrinsics.rotation.row(2).transpose().dot(p_ego) + self.extrinsics.translation.z
    }
}

/// JSON rig document: `{"id": ..., "intrinsics": {...}, "extrinsics": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigConfig {
    #[serde(default = "default_rig_id")]
    pub id: String,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

fn default_rig_id() -> String {
    "rig".to_string()
}

impl RigConfig {
    pub fn build(&self) -> Result<CameraRig> {
        CameraRig::with_id(&self.id, self.intrinsics, self.extrinsics)
    }

    pub fn from_rig(rig: &CameraRig) -> Self {
        Self {
            id: rig.id.clone(),
            intrinsics: rig.intrinsics,
            extrinsics: rig.extrinsics,
        }
    }
}

/// Default roadside rig: 1536x864 image, f = 1000 px, camera 5 m above the
/// ground looking along ego +x, pitched 10 degrees down.
pub fn default_rig() -> CameraRig {
    rig_at_height(5.0, 10f64.to_radians())
}

/// Default intrinsics with the camera at `height` metres, pitched down by
/// `pitch_down` radians, looking along ego +x.
pub fn rig_at_height(height: f64, pitch_down: f64) -> CameraRig {
    let intrinsics = Intrinsics::new(1000.0, 1000.0, 768.0, 432.0, 1536, 864).unwrap();
    let extrinsics = Extrinsics::from_pose(Vector3::new(0.0, 0.0, height), 0.0, pitch_down, 0.0);
    CameraRig::new(intrinsics, extrinsics).expect("default rig is valid")
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

/// Seven-parameter 3D box: ego center, size and yaw about ego z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Box3DRaw")]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

#[derive(Deserialize)]
struct Box3DRaw {
    x: f64,
    y: f64,
    z: f64,
    l: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl TryFrom<Box3DRaw> for Box3D {
    type Error = Error;
    fn try_from(r: Box3DRaw) -> Result<Self> {
        Box3D::new(r.x, r.y, r.z, r.l, r.w, r.h, r.theta)
    }
}

impl Box3D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if !(l > 0.0 && w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!(
                "dimensions must be positive, got l={l} w={w} h={h}"
            )));
        }
        if ![x, y, z, l, w, h, theta].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox("non-finite parameter".into()));
        }
        Ok(Self {
            x,
            y,
            z,
            l,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.l / 2.0, self.w / 2.0, self.h / 2.0)
    }

    /// Rotation taking box-local coordinates (x along length) to ego.
    pub fn local_to_ego_rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    pub fn bottom(&self) -> f64 {
        self.z - self.h / 2.0
    }

    pub fn top(&self) -> f64 {
        self.z + self.h / 2.0
    }

    /// Footprint corners in ego xy, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[a, b]| [self.x + c * a - s * b, self.y + s * a + c * b])
    }
}
