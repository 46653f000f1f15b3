//! Coordinate frames, the equirectangular camera model and the Jacobians
//! that tie them together.
//!
//! Axis convention (used by every other module): the camera frame is
//! right-handed with `+y` along the cylinder axis. `+y` points toward the
//! bottom of the panorama (`v = H`), `+z` is the forward direction that
//! lands on the image center, and cylindrical `θ = 0` sits on the panorama
//! seam (`u ≡ 0 mod W`). `θ = π` therefore faces the image center.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2x3, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in a camera-centered (or world) Cartesian frame, meters.
pub type CartPoint = Vector3<f64>;

/// Pole guard on `x² + z²` (m²) below which projection Jacobians are undefined.
pub const POLE_EPS: f64 = 1e-12;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round tiny negatives up to exactly 2π
    if w >= TAU {
        0.0
    } else {
        w + 0.0
    }
}

/// Signed angular difference `a - b` folded into `[-π, π)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(TAU) - PI
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylCoord {
    pub r: f64,
    pub theta: f64,
    pub z: f64,
}

impl CylCoord {
    /// Builds a coordinate with `θ` normalized to `[0, 2π)`.
    pub fn new(r: f64, theta: f64, z: f64) -> Self {
        Self {
            r,
            theta: wrap_angle(theta),
            z,
        }
    }
}

/// Local offsets `(δr, δθ, δz)` applied on top of a [`CylCoord`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CylOffset {
    pub dr: f64,
    pub dtheta: f64,
    pub dz: f64,
}

impl CylOffset {
    pub const ZERO: CylOffset = CylOffset {
        dr: 0.0,
        dtheta: 0.0,
        dz: 0.0,
    };

    pub fn new(dr: f64, dtheta: f64, dz: f64) -> Self {
        Self { dr, dtheta, dz }
    }
}

/// Spherical coordinate: radius, polar angle from the `-y` (top) axis,
/// azimuth sharing the cylindrical `θ` convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphCoord {
    pub rho: f64,
    pub polar: f64,
    pub azimuth: f64,
}

/// Equirectangular image size. Always `width == 2 * height`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims", into = "RawDims")]
pub struct ImageDims {
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDims {
    width: usize,
    height: usize,
}

impl TryFrom<RawDims> for ImageDims {
    type Error = Error;
    fn try_from(raw: RawDims) -> Result<Self> {
        ImageDims::new(raw.width, raw.height)
    }
}

impl From<ImageDims> for RawDims {
    fn from(d: ImageDims) -> Self {
        RawDims {
            width: d.width,
            height: d.height,
        }
    }
}

impl ImageDims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if height < 2 || width != 2 * height {
            return Err(Error::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn from_height(height: usize) -> Result<Self> {
        Self::new(2 * height, height)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Latitude (radians, `-π/2` at the top) of the center of row `row`.
    pub fn row_latitude(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * PI / self.height as f64 - PI / 2.0
    }
}

impl Default for ImageDims {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 512,
        }
    }
}

/// Continuous pixel position. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        let err = ortho.max((det - 1.0).abs());
        if !err.is_finite() || err > 1e-9 || !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidPose(err));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` about the `+y` axis that advances cylindrical `θ` by `angle`.
    pub fn yaw(angle: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: yaw_matrix(angle),
            translation,
        }
    }

    /// Parses a row-major 4x4 camera-to-world matrix.
    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self> {
        let bottom = rows[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidPose(f64::NAN));
        }
        let r = Matrix3::new(
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        );
        Self::new(r, Vector3::new(rows[0][3], rows[1][3], rows[2][3]))
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m: Matrix4<f64> = self.to_homogeneous();
        let mut rows = [[0.0; 4]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        rows
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> CartPoint {
        self.translation
    }

    /// Camera frame to world frame.
    #[inline]
    pub fn to_world(&self, p: &CartPoint) -> CartPoint {
        self.rotation * p + self.translation
    }

    /// World frame to camera frame.
    #[inline]
    pub fn to_camera(&self, p: &CartPoint) -> CartPoint {
        self.rotation.tr_mul(&(p - self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

/// Rotation about `+y` that maps cylindrical `θ` to `θ + angle`.
pub fn yaw_matrix(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Projects a camera-frame point onto the equirectangular image.
pub fn equirect_project(p: &CartPoint, dims: ImageDims) -> Result<PixelCoord> {
    if p.x == 0.0 && p.y == 0.0 && p.z == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::DegenerateDirection);
    }
    let w = dims.width as f64;
    let h = dims.height as f64;
    let u = w / TAU * (p.x.atan2(p.z) + PI);
    let v = h / PI * (p.y.atan2(p.x.hypot(p.z)) + PI / 2.0);
    Ok(PixelCoord {
        u: wrap_pixel_u(u, w),
        v: v.clamp(0.0, h),
    })
}

#[inline]
pub(crate) fn wrap_pixel_u(u: f64, w: f64) -> f64 {
    let m = u.rem_euclid(w);
    if m >= w {
        0.0
    } else {
        m
    }
}

/// Inverse of [`equirect_project`] at a given Euclidean distance.
pub fn equirect_unproject(px: PixelCoord, depth: f64, dims: ImageDims) -> Result<CartPoint> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let (azimuth, latitude) = pixel_angles(px, dims);
    Ok(direction_from_angles(azimuth, latitude) * depth)
}

/// Azimuth `atan2(x, z)` and latitude of a pixel position.
pub(crate) fn pixel_angles(px: PixelCoord, dims: ImageDims) -> (f64, f64) {
    let azimuth = px.u * TAU / dims.width as f64 - PI;
    let latitude = px.v * PI / dims.height as f64 - PI / 2.0;
    (azimuth, latitude)
}

pub(crate) fn direction_from_angles(azimuth: f64, latitude: f64) -> CartPoint {
    let (sa, ca) = azimuth.sin_cos();
    let (sl, cl) = latitude.sin_cos();
    Vector3::new(cl * sa, sl, cl * ca)
}

/// Unit ray direction through the center of pixel `(col, row)`.
pub fn pixel_ray(col: usize, row: usize, dims: ImageDims) -> CartPoint {
    let (az, lat) = pixel_angles(
        PixelCoord {
            u: col as f64 + 0.5,
            v: row as f64 + 0.5,
        },
        dims,
    );
    direction_from_angles(az, lat)
}

/// `∂(u, v) / ∂(x, y, z)` of the equirectangular projection, px per meter.
pub fn equirect_jacobian(p: &CartPoint, dims: ImageDims) -> Result<Matrix2x3<f64>> {
    let rho2 = p.x * p.x + p.z * p.z;
    if !(rho2 > POLE_EPS) {
        return Err(Error::PolarSingularity(rho2));
    }
    let w = dims.width as f64;
    let h = dims.height as f64;
    let rho = rho2.sqrt();
    let r2 = rho2 + p.y * p.y;
    let ku = w / TAU;
    let kv = h / PI;
    Ok(Matrix2x3::new(
        ku * p.z / rho2,
        0.0,
        -ku * p.x / rho2,
        -kv * p.x * p.y / (r2 * rho),
        kv * rho / r2,
        -kv * p.z * p.y / (r2 * rho),
    ))
}

/// Cylindrical (plus local offset) to Cartesian.
pub fn cyl_to_cart(c: &CylCoord, d: &CylOffset) -> Result<CartPoint> {
    let radius = c.r + d.dr;
    if radius < 0.0 || radius.is_nan() {
        return Err(Error::NegativeRadius(radius));
    }
    let (s, co) = (c.theta + d.dtheta).sin_cos();
    Ok(Vector3::new(-radius * s, c.z + d.dz, -radius * co))
}

/// Inverse of [`cyl_to_cart`] with zero offsets. On-axis points get `θ = 0`.
pub fn cart_to_cyl(p: &CartPoint) -> CylCoord {
    let r = p.x.hypot(p.z);
    let theta = if r == 0.0 {
        0.0
    } else {
        wrap_angle((-p.x).atan2(-p.z))
    };
    CylCoord { r, theta, z: p.y }
}

/// Jacobian of [`cyl_to_cart`] with respect to `(r, θ, z)`; rows are `(x, y, z)`.
pub fn cyl_jacobian(c: &CylCoord, d: &CylOffset) -> Result<Matrix3<f64>> {
    let radius = c.r + d.dr;
    if radius < 0.0 || radius.is_nan() {
        return Err(Error::NegativeRadius(radius));
    }
    let (s, co) = (c.theta + d.dtheta).sin_cos();
    Ok(Matrix3::new(
        -s,
        -radius * co,
        0.0,
        0.0,
        0.0,
        1.0,
        -co,
        radius * s,
        0.0,
    ))
}

/// Maps local per-axis extents through the elementwise absolute Jacobian.
pub fn transform_scale(local: &Vector3<f64>, jacobian: &Matrix3<f64>) -> Result<Vector3<f64>> {
    if !local.iter().all(|s| *s > 0.0 && s.is_finite()) {
        return Err(Error::NonPositiveScale([local.x, local.y, local.z]));
    }
    let out = jacobian.abs() * local;
    if !out.iter().all(|s| *s > 0.0) {
        return Err(Error::NonPositiveScale([out.x, out.y, out.z]));
    }
    Ok(out)
}

pub fn sph_to_cart(s: &SphCoord) -> CartPoint {
    let (sp, cp) = s.polar.sin_cos();
    let (sa, ca) = s.azimuth.sin_cos();
    Vector3::new(-s.rho * sp * sa, -s.rho * cp, -s.rho * sp * ca)
}

pub fn cart_to_sph(p: &CartPoint) -> SphCoord {
    let rho = p.norm();
    if rho == 0.0 {
        return SphCoord {
            rho: 0.0,
            polar: 0.0,
            azimuth: 0.0,
        };
    }
    let polar = (-p.y / rho).clamp(-1.0, 1.0).acos();
    let azimuth = if p.x == 0.0 && p.z == 0.0 {
        0.0
    } else {
        wrap_angle((-p.x).atan2(-p.z))
    };
    SphCoord {
        rho,
        polar,
        azimuth,
    }
}

/// Jacobian of [`sph_to_cart`] with respect to `(ρ, polar, azimuth)`.
pub fn sph_jacobian(s: &SphCoord) -> Matrix3<f64> {
    let (sp, cp) = s.polar.sin_cos();
    let (sa, ca) = s.azimuth.sin_cos();
    let r = s.rho;
    Matrix3::new(
        -sp * sa,
        -r * cp * sa,
        -r * sp * ca,
        -cp,
        r * sp,
        0.0,
        -sp * ca,
        -r * cp * ca,
        r * sp * sa,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dims() -> ImageDims {
        ImageDims::new(1024, 512).unwrap()
    }

    #[test]
    fn forward_axis_hits_image_center() {
        let px = equirect_project(&Vector3::new(0.0, 0.0, 1.0), dims()).unwrap();
        assert_eq!((px.u, px.v), (512.0, 256.0));
        let px = equirect_project(&Vector3::new(1.0, 0.0, 0.0), dims()).unwrap();
        assert_relative_eq!(px.u, 768.0, epsilon = 1e-12);
        assert_relative_eq!(px.v, 256.0, epsilon = 1e-12);
    }

    #[test]
    fn off_axis_projection_matches_hand_evaluation() {
        // W/(2π)(atan2(0.3, 1.2) + π), H/π(atan2(-0.4, hypot(0.3, 1.2)) + π/2)
        let px = equirect_project(&Vector3::new(0.3, -0.4, 1.2), dims()).unwrap();
        assert_relative_eq!(px.u, 551.9253147532131, epsilon = 1e-9);
        assert_relative_eq!(px.v, 205.02694929239524, epsilon = 1e-9);
    }

    #[test]
    fn origin_is_degenerate() {
        assert!(matches!(
            equirect_project(&Vector3::zeros(), dims()),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn seam_direction_wraps_to_zero() {
        // atan2(+0, -1) = π gives u = W, which wraps to 0
        let px = equirect_project(&Vector3::new(0.0, 0.0, -1.0), dims()).unwrap();
        assert_eq!(px.u, 0.0);
        let px = equirect_project(&Vector3::new(-0.0, 0.0, -1.0), dims()).unwrap();
        assert_eq!(px.u, 0.0);
    }

    #[test]
    fn unproject_center_and_seam() {
        let p = equirect_unproject(PixelCoord { u: 512.0, v: 256.0 }, 1.0, dims()).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let p = equirect_unproject(PixelCoord { u: 0.0, v: 128.0 }, 2.0, dims()).unwrap();
        let s = 2.0 * (PI / 4.0).cos();
        assert_relative_eq!(p, Vector3::new(0.0, -s, -s), epsilon = 1e-12);
        assert!(matches!(
            equirect_unproject(PixelCoord { u: 1.0, v: 1.0 }, 0.0, dims()),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn jacobian_at_forward_axis() {
        let j = equirect_jacobian(&Vector3::new(0.0, 0.0, 1.0), dims()).unwrap();
        assert_relative_eq!(j[(0, 0)], 1024.0 / TAU, epsilon = 1e-12);
        assert_eq!(j[(0, 2)], 0.0);
        assert_relative_eq!(j[(1, 1)], 512.0 / PI, epsilon = 1e-12);
        assert_eq!(j[(0, 1)], 0.0);
        assert!(matches!(
            equirect_jacobian(&Vector3::new(0.0, 3.0, 0.0), dims()),
            Err(Error::PolarSingularity(_))
        ));
    }

    #[test]
    fn cylindrical_examples() {
        let p = cyl_to_cart(&CylCoord::new(1.0, 0.0, 0.0), &CylOffset::ZERO).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, -1.0));
        let p = cyl_to_cart(&CylCoord::new(1.0, PI / 2.0, 2.0), &CylOffset::ZERO).unwrap();
        assert_relative_eq!(p, Vector3::new(-1.0, 2.0, 0.0), epsilon = 1e-15);
        let p = cyl_to_cart(
            &CylCoord::new(2.0, 0.0, 0.0),
            &CylOffset::new(0.1, 0.05, -0.2),
        )
        .unwrap();
        assert_relative_eq!(
            p,
            Vector3::new(-0.1049562554684245, -0.2, -2.0973755468294293),
            epsilon = 1e-12
        );
        assert!(matches!(
            cyl_to_cart(&CylCoord::new(0.1, 0.0, 0.0), &CylOffset::new(-0.2, 0.0, 0.0)),
            Err(Error::NegativeRadius(_))
        ));
    }

    #[test]
    fn cart_to_cyl_examples() {
        let c = cart_to_cyl(&Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(c, CylCoord { r: 1.0, theta: 0.0, z: 0.0 });
        let c = cart_to_cyl(&Vector3::new(0.0, 5.0, 0.0));
        assert_eq!(c, CylCoord { r: 0.0, theta: 0.0, z: 5.0 });
    }

    #[test]
    fn cyl_jacobian_at_theta_zero() {
        let r = 2.5;
        let j = cyl_jacobian(&CylCoord::new(r, 0.0, 0.3), &CylOffset::ZERO).unwrap();
        let expect = Matrix3::new(0.0, -r, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0);
        assert_relative_eq!(j, expect, epsilon = 1e-15);
    }

    #[test]
    fn scale_transform_at_theta_zero() {
        let r = 3.0;
        let j = cyl_jacobian(&CylCoord::new(r, 0.0, 0.0), &CylOffset::ZERO).unwrap();
        let s = transform_scale(&Vector3::new(0.1, 0.02, 0.3), &j).unwrap();
        assert_relative_eq!(s, Vector3::new(r * 0.02, 0.3, 0.1), epsilon = 1e-15);
        let j1 = cyl_jacobian(&CylCoord::new(1.0, 0.0, 0.0), &CylOffset::ZERO).unwrap();
        let s = transform_scale(&Vector3::new(1.0, 1.0, 1.0), &j1).unwrap();
        assert_relative_eq!(s, Vector3::new(1.0, 1.0, 1.0), epsilon = 1e-15);
        assert!(transform_scale(&Vector3::new(0.0, 1.0, 1.0), &j1).is_err());
        assert!(transform_scale(&Vector3::new(1.0, -1.0, 1.0), &j1).is_err());
    }

    #[test]
    fn spherical_equator_and_axis() {
        // polar = π/2, azimuth = π faces +z like θ = π
        let p = sph_to_cart(&SphCoord {
            rho: 2.0,
            polar: PI / 2.0,
            azimuth: PI,
        });
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        let p = sph_to_cart(&SphCoord {
            rho: 1.0,
            polar: 0.0,
            azimuth: 1.0,
        });
        assert_relative_eq!(p, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        let s = cart_to_sph(&Vector3::new(0.0, -1.0, 0.0));
        assert_eq!((s.rho, s.polar, s.azimuth), (1.0, 0.0, 0.0));
    }

    #[test]
    fn dims_validation() {
        assert!(ImageDims::new(1024, 512).is_ok());
        assert!(ImageDims::new(1000, 512).is_err());
        assert!(ImageDims::new(2, 1).is_err());
        let d: ImageDims = serde_json::from_str(r#"{"width":64,"height":32}"#).unwrap();
        assert_eq!(d.width(), 64);
        assert!(serde_json::from_str::<ImageDims>(r#"{"width":64,"height":31}"#).is_err());
    }

    #[test]
    fn pose_roundtrip_and_validation() {
        let pose = Pose::yaw(0.7, Vector3::new(1.0, -0.5, 2.0));
        let back = Pose::from_rows(&pose.to_rows()).unwrap();
        assert_relative_eq!(back.rotation(), pose.rotation(), epsilon = 1e-15);
        let p = Vector3::new(0.3, 0.2, -1.0);
        assert_relative_eq!(pose.to_camera(&pose.to_world(&p)), p, epsilon = 1e-12);
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(bad, Vector3::zeros()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn yaw_advances_theta() {
        let c = CylCoord::new(2.0, 0.4, 0.1);
        let p = cyl_to_cart(&c, &CylOffset::ZERO).unwrap();
        let q = yaw_matrix(0.3) * p;
        let back = cart_to_cyl(&q);
        assert_relative_eq!(back.theta, 0.7, epsilon = 1e-12);
    }
}
