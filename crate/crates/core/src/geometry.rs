//! Rotations and the projective maps built from them.
//!
//! Camera frame convention: x right, y down, z forward. A misalignment
//! `(roll, pitch, yaw)` is the rotation vector `(ω_x, ω_y, ω_z)` in that frame,
//! which is the assignment under which the first-order expansion of the exact
//! rotation reproduces the small-angle matrix
//!
//! ```text
//! | 1    -yaw   pitch |
//! | yaw   1    -roll  |
//! | -pitch roll  1    |
//! ```
//!
//! Angles cross the public API in degrees and are converted to radians
//! internally.

use std::ops::{Neg, Sub};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Largest per-axis magnitude (degrees) any toolkit workflow accepts.
pub const OPERATING_ENVELOPE_DEG: f64 = 5.0;

/// Rotational fault between the LiDAR projection and the camera image, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerMisalignment {
    /// Rotation about the camera x-axis.
    pub roll: f64,
    /// Rotation about the camera y-axis.
    pub pitch: f64,
    /// Rotation about the camera z-axis (optical axis).
    pub yaw: f64,
}

impl EulerMisalignment {
    pub const ZERO: Self = Self {
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
    };

    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    /// Rotation vector in radians.
    pub fn to_radians(self) -> Vector3<f64> {
        Vector3::new(
            self.roll.to_radians(),
            self.pitch.to_radians(),
            self.yaw.to_radians(),
        )
    }

    pub fn from_radians(w: &Vector3<f64>) -> Self {
        Self::new(w.x.to_degrees(), w.y.to_degrees(), w.z.to_degrees())
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }

    /// Largest absolute component, the quantity detection thresholds apply to.
    pub fn max_abs(&self) -> f64 {
        self.roll.abs().max(self.pitch.abs()).max(self.yaw.abs())
    }

    /// Euclidean norm of the rotation vector, degrees.
    pub fn norm(&self) -> f64 {
        (self.roll * self.roll + self.pitch * self.pitch + self.yaw * self.yaw).sqrt()
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.roll), f(self.pitch), f(self.yaw))
    }

    /// Rejects non-finite values and anything outside the operating envelope.
    pub fn check_envelope(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Domain(format!("non-finite misalignment {self:?}")));
        }
        if self.max_abs() > OPERATING_ENVELOPE_DEG {
            return Err(Error::Domain(format!(
                "misalignment {self:?} exceeds the {OPERATING_ENVELOPE_DEG} degree envelope"
            )));
        }
        Ok(())
    }
}

impl Neg for EulerMisalignment {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(|v| -v)
    }
}

impl Sub for EulerMisalignment {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.roll - rhs.roll, self.pitch - rhs.pitch, self.yaw - rhs.yaw)
    }
}

/// Exact rotation `exp([ω]×)` for `ω = (roll, pitch, yaw)` in radians.
pub fn rotation_from_misalignment(dr: EulerMisalignment) -> Rotation3<f64> {
    Rotation3::new(dr.to_radians())
}

/// Inverse of [`rotation_from_misalignment`] via the log map. Unambiguous for
/// rotation angles below π, which covers the operating envelope by a wide margin.
pub fn misalignment_from_rotation(r: &Rotation3<f64>) -> EulerMisalignment {
    EulerMisalignment::from_radians(&log_map(r))
}

// atan2 on the quaternion keeps full relative precision for tiny angles,
// where the trace-based acos loses about half the digits.
fn log_map(r: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let (w, v) = (q.w, q.imag());
    let (w, v) = if w < 0.0 { (-w, -v) } else { (w, v) };
    let s = v.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    v * (2.0 * s.atan2(w) / s)
}

/// First-order rotation `I + [ω]×`. Not orthonormal.
pub fn small_angle_matrix(dr: EulerMisalignment) -> Matrix3<f64> {
    let w = dr.to_radians();
    Matrix3::new(
        1.0, -w.z, w.y, //
        w.z, 1.0, -w.x, //
        -w.y, w.x, 1.0,
    )
}

/// Geodesic angle of a rotation, degrees.
pub fn rotation_angle_deg(r: &Rotation3<f64>) -> f64 {
    log_map(r).norm().to_degrees()
}

/// Pinhole intrinsics (no distortion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, centred principal point, focal length from the horizontal FOV.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Result<Self> {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// 3840×2160 with a 30° horizontal field of view (fx = fy ≈ 7165.5 px).
    pub fn reference() -> Self {
        Self::from_hfov(3840, 2160, 30.0).expect("reference intrinsics are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
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

    /// Whether a continuous pixel position lies in `[0, width) × [0, height)`.
    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    pub fn hfov_rad(&self) -> f64 {
        2.0 * (self.width as f64 / 2.0 / self.fx).atan()
    }
}

/// Rigid transform mapping LiDAR-frame points into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    /// Pure rotation `[R | 0]`.
    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_inv = self.rotation.inverse();
        RigidTransform::new(r_inv, -(r_inv * self.translation))
    }

    /// Largest absolute entry difference of the 3×4 matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation.matrix() - other.rotation.matrix()).amax();
        let dt = (self.translation - other.translation).amax();
        dr.max(dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Homogeneous normalized image coordinates `K⁻¹ [u v 1]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl NormalizedPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Rescaled so that `z = 1`.
    pub fn renormalized(self) -> Self {
        Self::new(self.x / self.z, self.y / self.z, 1.0)
    }
}

/// Pinhole projection. Returns the pixel and the camera-frame depth `z`.
pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<(PixelPoint, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::NonPositiveDepth(p.z));
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    Ok((PixelPoint::new(u, v), p.z))
}

pub fn normalize(p: PixelPoint, k: &CameraIntrinsics) -> NormalizedPoint {
    NormalizedPoint::new((p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy, 1.0)
}

pub fn denormalize(p: NormalizedPoint, k: &CameraIntrinsics) -> PixelPoint {
    PixelPoint::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
}

/// `K · R · K⁻¹`. `r` may be an exact rotation or the small-angle matrix.
pub fn homography(k: &CameraIntrinsics, r: &Matrix3<f64>) -> Matrix3<f64> {
    k.matrix() * r * k.inverse_matrix()
}

pub fn apply_homography(h: &Matrix3<f64>, p: PixelPoint) -> PixelPoint {
    let q = h * Vector3::new(p.u, p.v, 1.0);
    PixelPoint::new(q.x / q.z, q.y / q.z)
}

/// Lateral offset at `range` caused by a pointing error of `angle` radians.
pub fn lateral_error(angle: f64, range: f64) -> f64 {
    range * angle.tan()
}

/// Sparse depth raster. Zero means no return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    /// Row-major camera-frame depths in meters.
    pub values: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn get(&self, col: u32, row: u32) -> f64 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&z| z != 0.0).count()
    }

    /// `(col, row, depth)` for every pixel holding a return.
    pub fn returns(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        let w = self.width as usize;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &z)| z != 0.0)
            .map(move |(i, &z)| ((i % w) as u32, (i / w) as u32, z))
    }
}

/// Pixel cell a continuous projection lands in, if inside the image.
pub fn pixel_cell(p: PixelPoint, k: &CameraIntrinsics) -> Option<(u32, u32)> {
    k.contains(p).then(|| (p.u.floor() as u32, p.v.floor() as u32))
}

/// Projects LiDAR points through `t` and `k` into a z-buffered depth raster.
///
/// Each pixel keeps the smallest camera-frame z landing on it; on exact ties
/// the first point in input order wins. Points behind the camera or outside
/// the image are skipped.
pub fn render_depth_image(points: &[Point3], t: &RigidTransform, k: &CameraIntrinsics) -> DepthImage {
    let mut img = DepthImage::zeros(k.width, k.height);
    let w = k.width as usize;
    for p in points {
        let pc = t.apply(p);
        let Ok((px, z)) = project(&pc, k) else {
            continue;
        };
        let Some((col, row)) = pixel_cell(px, k) else {
            continue;
        };
        let slot = &mut img.values[row as usize * w + col as usize];
        if *slot == 0.0 || z < *slot {
            *slot = z;
        }
    }
    img
}
