//! Synthetic box rooms with checkerboard walls: analytic ground truth,
//! dense surface Gaussians and the camera rig.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Frame, Gaussian, GaussianCloud, Source};
use crate::geometry::{pixel_ray, CartPoint, ImageDims, Pose};
use crate::panorama::Panorama;
use crate::triplane::{FeatureMap, FeaturePoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    /// `y = max`; +y points down.
    Floor,
    Ceiling,
    WallPosX,
    WallNegX,
    WallPosZ,
    WallNegZ,
}

impl Surface {
    pub const ALL: [Surface; 6] = [
        Surface::Floor,
        Surface::Ceiling,
        Surface::WallPosX,
        Surface::WallNegX,
        Surface::WallPosZ,
        Surface::WallNegZ,
    ];

    /// Normal axis (0 = x, 1 = y, 2 = z) and whether it is the max face.
    pub fn axis(self) -> (usize, bool) {
        match self {
            Surface::Floor => (1, true),
            Surface::Ceiling => (1, false),
            Surface::WallPosX => (0, true),
            Surface::WallNegX => (0, false),
            Surface::WallPosZ => (2, true),
            Surface::WallNegZ => (2, false),
        }
    }

    pub fn is_horizontal(self) -> bool {
        self.axis().0 == 1
    }

    fn palette(self) -> [[f64; 3]; 2] {
        match self {
            Surface::Floor => [[0.55, 0.35, 0.2], [0.8, 0.65, 0.45]],
            Surface::Ceiling => [[0.9, 0.9, 0.9], [0.65, 0.65, 0.72]],
            Surface::WallPosX => [[0.2, 0.4, 0.8], [0.6, 0.75, 0.95]],
            Surface::WallNegX => [[0.8, 0.2, 0.2], [0.95, 0.6, 0.5]],
            Surface::WallPosZ => [[0.2, 0.7, 0.3], [0.7, 0.95, 0.6]],
            Surface::WallNegZ => [[0.85, 0.8, 0.2], [0.45, 0.4, 0.1]],
        }
    }

    fn from_axis(axis: usize, max: bool) -> Surface {
        match (axis, max) {
            (0, true) => Surface::WallPosX,
            (0, false) => Surface::WallNegX,
            (1, true) => Surface::Floor,
            (1, false) => Surface::Ceiling,
            (2, true) => Surface::WallPosZ,
            _ => Surface::WallNegZ,
        }
    }
}

/// Axis-aligned room, extents in meters along world x, y (height), z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Room {
    pub center: [f64; 3],
    pub size: [f64; 3],
    /// Checker cell edge, meters. Cells are centered on the room's center
    /// lines so that no edge falls on `x = 0` or `z = 0`.
    pub checker: f64,
}

impl Default for Room {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            size: [6.0, 3.0, 4.0],
            checker: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub surface: Surface,
    pub point: CartPoint,
}

impl Room {
    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|s| *s > 0.0 && s.is_finite()) || !(self.checker > 0.0) {
            return Err(Error::Config("room size and checker must be positive".into()));
        }
        Ok(())
    }

    pub fn min(&self) -> CartPoint {
        Vector3::from(self.center) - Vector3::from(self.size) * 0.5
    }

    pub fn max(&self) -> CartPoint {
        Vector3::from(self.center) + Vector3::from(self.size) * 0.5
    }

    /// Strictly inside the room.
    pub fn contains(&self, p: &CartPoint) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|k| p[k] > lo[k] && p[k] < hi[k])
    }

    /// First surface hit by a ray from an interior point.
    pub fn ray_cast(&self, origin: &CartPoint, dir: &Vector3<f64>) -> Option<Hit> {
        let (lo, hi) = (self.min(), self.max());
        let mut best: Option<(f64, usize, bool)> = None;
        for k in 0..3 {
            if dir[k] == 0.0 {
                continue;
            }
            let (bound, max) = if dir[k] > 0.0 { (hi[k], true) } else { (lo[k], false) };
            let t = (bound - origin[k]) / dir[k];
            if t > 0.0 && best.is_none_or(|(b, _, _)| t < b) {
                best = Some((t, k, max));
            }
        }
        let (t, k, max) = best?;
        let mut point = origin + dir * t;
        point[k] = if max { hi[k] } else { lo[k] };
        Some(Hit {
            distance: t * dir.norm(),
            surface: Surface::from_axis(k, max),
            point,
        })
    }

    /// Checkerboard color of `surface` at world point `p`.
    pub fn color_at(&self, surface: Surface, p: &CartPoint) -> Vector3<f64> {
        let (axis, _) = surface.axis();
        let c = Vector3::from(self.center);
        let (a, b) = match axis {
            0 => (p.z - c.z, p.y - c.y),
            1 => (p.x - c.x, p.z - c.z),
            _ => (p.x - c.x, p.y - c.y),
        };
        let i = (a / self.checker + 0.5).floor() as i64;
        let j = (b / self.checker + 0.5).floor() as i64;
        Vector3::from(surface.palette()[(i + j).rem_euclid(2) as usize])
    }

    /// Surface area of one face, m².
    pub fn area(&self, surface: Surface) -> f64 {
        let (axis, _) = surface.axis();
        let s = self.size;
        match axis {
            0 => s[1] * s[2],
            1 => s[0] * s[2],
            _ => s[0] * s[1],
        }
    }

    /// Regular grid on `surface` with the given spacing, cell-centered.
    pub fn surface_grid(&self, surface: Surface, spacing: f64) -> Vec<CartPoint> {
        let (axis, max) = surface.axis();
        let (lo, hi) = (self.min(), self.max());
        let (ea, eb) = match axis {
            0 => (2, 1),
            1 => (0, 2),
            _ => (0, 1),
        };
        let na = ((hi[ea] - lo[ea]) / spacing).round().max(1.0) as usize;
        let nb = ((hi[eb] - lo[eb]) / spacing).round().max(1.0) as usize;
        let (sa, sb) = ((hi[ea] - lo[ea]) / na as f64, (hi[eb] - lo[eb]) / nb as f64);
        let mut out = Vec::with_capacity(na * nb);
        for ib in 0..nb {
            for ia in 0..na {
                let mut p = Vector3::zeros();
                p[axis] = if max { hi[axis] } else { lo[axis] };
                p[ea] = lo[ea] + (ia as f64 + 0.5) * sa;
                p[eb] = lo[eb] + (ib as f64 + 0.5) * sb;
                out.push(p);
            }
        }
        out
    }
}

/// Per-pixel ground truth for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub panorama: Panorama,
    pub surfaces: Vec<Surface>,
}

/// Ray-casts the room at every pixel center. Alpha is 1 everywhere.
pub fn ground_truth(room: &Room, pose: &Pose, dims: ImageDims) -> Result<GroundTruth> {
    let origin = pose.center();
    if !room.contains(&origin) {
        return Err(Error::CameraOutsideRoom { index: 0 });
    }
    let w = dims.width();
    let rot = *pose.rotation();
    let hits: Vec<Hit> = (0..dims.pixel_count())
        .into_par_iter()
        .map(|i| {
            let dir = rot * pixel_ray(i % w, i / w, dims);
            room.ray_cast(&origin, &dir).expect("interior ray always exits")
        })
        .collect();
    let mut pano = Panorama::new(dims);
    let mut surfaces = Vec::with_capacity(hits.len());
    for (i, h) in hits.iter().enumerate() {
        let c = room.color_at(h.surface, &h.point);
        pano.rgb[i] = [c.x as f32, c.y as f32, c.z as f32];
        pano.depth[i] = h.distance as f32;
        pano.alpha[i] = 1.0;
        surfaces.push(h.surface);
    }
    Ok(GroundTruth {
        panorama: pano,
        surfaces,
    })
}

/// Parameters of the dense surface sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceSampling {
    /// Grid spacing on each surface, meters.
    pub spacing: f64,
    /// In-plane standard deviation as a multiple of the spacing.
    pub sigma_factor: f64,
    /// Standard deviation along the surface normal, meters.
    pub thickness: f64,
    pub opacity: f64,
    /// In-plane jitter, as a fraction of the spacing.
    pub jitter: f64,
}

impl Default for SurfaceSampling {
    fn default() -> Self {
        Self {
            spacing: 0.05,
            sigma_factor: 0.7,
            thickness: 0.004,
            opacity: 0.95,
            jitter: 0.2,
        }
    }
}

/// Flat Gaussians tiled over every surface not listed in `exclude`,
/// colored by the checkerboard at their centers.
pub fn surface_cloud(
    room: &Room,
    sampling: &SurfaceSampling,
    exclude: &[Surface],
    seed: u64,
) -> Result<GaussianCloud> {
    room.validate()?;
    if !(sampling.spacing > 0.0) {
        return Err(Error::Config("surface spacing must be positive".into()));
    }
    // one stream per surface so masking a wall leaves the others unchanged
    let mut gaussians = Vec::new();
    for (si, surface) in Surface::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((si as u64 + 1) << 32));
        let (axis, _) = surface.axis();
        let sigma = sampling.spacing * sampling.sigma_factor;
        let mut scale = Vector3::repeat(sigma);
        scale[axis] = sampling.thickness;
        let (lo, hi) = (room.min(), room.max());
        for p in room.surface_grid(surface, sampling.spacing) {
            let mut q = p;
            for k in (0..3).filter(|k| *k != axis) {
                let j = rng.random_range(-1.0..=1.0) * sampling.jitter * sampling.spacing;
                q[k] = (q[k] + j).clamp(lo[k], hi[k]);
            }
            if exclude.contains(&surface) {
                continue;
            }
            let color = room.color_at(surface, &q);
            gaussians.push(Gaussian::new(q, scale, UnitQuaternion::identity(), sampling.opacity, color)?);
        }
    }
    GaussianCloud::from_gaussians(Frame::World, gaussians, Source::Pixel { camera: 0 })
}

/// Deterministic stand-in for learned pixel features: a seeded random
/// projection of color, depth and viewing direction, squashed by `tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoder {
    dim: usize,
    weights: Vec<[f64; 8]>,
}

impl FeatureEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..dim)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        Self { dim, weights }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode(&self, rgb: [f32; 3], depth: f32, dir: &Vector3<f64>) -> Vec<f32> {
        let x = [
            rgb[0] as f64,
            rgb[1] as f64,
            rgb[2] as f64,
            depth as f64 / 4.0,
            dir.x,
            dir.y,
            dir.z,
            1.0,
        ];
        self.weights
            .iter()
            .map(|w| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().tanh() as f32)
            .collect()
    }
}

/// Feature points and a feature panorama for one camera, sampled every
/// `stride` pixels of its ground truth. Map pixel `(c, r)` takes the
/// features of full-resolution pixel `(c·stride + stride/2, r·stride + stride/2)`.
pub fn synthetic_features(
    gt: &GroundTruth,
    pose: &Pose,
    camera: u32,
    stride: usize,
    encoder: &FeatureEncoder,
) -> Result<(Vec<FeaturePoint>, FeatureMap)> {
    let dims = gt.panorama.dims();
    if stride == 0 || dims.width() % stride != 0 || dims.height() % stride != 0 {
        return Err(Error::Config(format!(
            "feature stride {stride} does not divide {}x{}",
            dims.width(),
            dims.height()
        )));
    }
    let small = ImageDims::new(dims.width() / stride, dims.height() / stride)?;
    let mut points = Vec::with_capacity(small.pixel_count());
    let mut data = Vec::with_capacity(small.pixel_count() * encoder.dim());
    let center = pose.center();
    for r in 0..small.height() {
        for c in 0..small.width() {
            let (col, row) = (c * stride + stride / 2, r * stride + stride / 2);
            let i = gt.panorama.index(col, row);
            let dir = pose.rotation() * pixel_ray(col, row, dims);
            let depth = gt.panorama.depth[i];
            let f = encoder.encode(gt.panorama.rgb[i], depth, &dir);
            data.extend_from_slice(&f);
            points.push(FeaturePoint {
                position: center + dir * depth as f64,
                feature: f,
                camera,
                pixel: i as u64,
            });
        }
    }
    Ok((points, FeatureMap::new(small, encoder.dim(), data)?))
}

#[derive(Serialize, Deserialize)]
struct PoseEntry {
    index: usize,
    camera_to_world: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    convention: String,
    poses: Vec<PoseEntry>,
}

const POSE_CONVENTION: &str = "camera-to-world 4x4 row-major, meters, +y down along the cylinder axis";

pub fn save_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let file = PoseFile {
        convention: POSE_CONVENTION.into(),
        poses: poses
            .iter()
            .enumerate()
            .map(|(index, p)| PoseEntry {
                index,
                camera_to_world: p.to_rows(),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    let file: PoseFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut entries = file.poses;
    entries.sort_by_key(|e| e.index);
    if entries.iter().enumerate().any(|(i, e)| e.index != i) {
        return Err(Error::Config("pose indices must be 0..n without gaps".into()));
    }
    entries.iter().map(|e| Pose::from_rows(&e.camera_to_world)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_depth_is_wall_distance() {
        let room = Room::default();
        let dims = ImageDims::new(64, 32).unwrap();
        let hit = room
            .ray_cast(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(hit.distance, 2.0);
        assert_eq!(hit.surface, Surface::WallPosZ);
        let gt = ground_truth(&room, &Pose::identity(), dims).unwrap();
        // the four pixels around the image center see the +z wall
        let i = gt.panorama.index(32, 16);
        assert_eq!(gt.surfaces[i], Surface::WallPosZ);
        let d = pixel_ray(32, 16, dims);
        assert!((gt.panorama.depth[i] as f64 - 2.0 / d.z).abs() < 1e-6);
    }

    #[test]
    fn depth_matches_intersection() {
        let room = Room::default();
        let dims = ImageDims::new(64, 32).unwrap();
        let pose = Pose::yaw(0.3, Vector3::new(0.5, -0.2, 0.3));
        let gt = ground_truth(&room, &pose, dims).unwrap();
        for i in (0..dims.pixel_count()).step_by(7) {
            let dir = pose.rotation() * pixel_ray(i % 64, i / 64, dims);
            let p = pose.center() + dir * gt.panorama.depth[i] as f64;
            let (lo, hi) = (room.min(), room.max());
            let on_face = (0..3).any(|k| (p[k] - lo[k]).abs() < 1e-5 || (p[k] - hi[k]).abs() < 1e-5);
            assert!(on_face);
        }
    }

    #[test]
    fn camera_outside_rejected() {
        let room = Room::default();
        let dims = ImageDims::new(64, 32).unwrap();
        let r = ground_truth(&room, &Pose::from_translation(Vector3::new(10.0, 0.0, 0.0)), dims);
        assert!(matches!(r, Err(Error::CameraOutsideRoom { .. })));
    }

    #[test]
    fn checker_centered_on_seam() {
        let room = Room::default();
        let a = room.color_at(Surface::WallNegZ, &Vector3::new(-0.01, 0.0, -2.0));
        let b = room.color_at(Surface::WallNegZ, &Vector3::new(0.01, 0.0, -2.0));
        assert_eq!(a, b);
        let c = room.color_at(Surface::WallNegZ, &Vector3::new(0.21, 0.0, -2.0));
        assert_ne!(a, c);
    }

    #[test]
    fn surface_cloud_is_seeded_and_on_surfaces() {
        let room = Room::default();
        let s = SurfaceSampling {
            spacing: 0.25,
            ..Default::default()
        };
        let a = surface_cloud(&room, &s, &[], 7).unwrap();
        let b = surface_cloud(&room, &s, &[], 7).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = (room.min(), room.max());
        for g in a.gaussians() {
            let p = g.position;
            assert!((0..3).any(|k| p[k] == lo[k] || p[k] == hi[k]));
        }
        let masked = surface_cloud(&room, &s, &[Surface::WallPosZ], 7).unwrap();
        let n_wall = room.surface_grid(Surface::WallPosZ, 0.25).len();
        assert_eq!(masked.len() + n_wall, a.len());
    }

    #[test]
    fn features_follow_pixels() {
        let room = Room::default();
        let dims = ImageDims::new(64, 32).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.5, 0.0, 0.0));
        let gt = ground_truth(&room, &pose, dims).unwrap();
        let enc = FeatureEncoder::new(6, 3);
        let (pts, map) = synthetic_features(&gt, &pose, 1, 4, &enc).unwrap();
        assert_eq!(pts.len(), 16 * 8);
        assert_eq!((map.dims().width(), map.dim()), (16, 6));
        for p in &pts {
            let (lo, hi) = (room.min(), room.max());
            assert!((0..3).all(|k| p.position[k] > lo[k] - 1e-5 && p.position[k] < hi[k] + 1e-5));
            let d = (p.position - pose.center()).norm();
            assert!((d - gt.panorama.depth[p.pixel as usize] as f64).abs() < 1e-5);
        }
        assert_eq!(&map.data[..6], pts[0].feature.as_slice());
        assert!(synthetic_features(&gt, &pose, 1, 5, &enc).is_err());
    }

    #[test]
    fn poses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        let poses = vec![
            Pose::from_translation(Vector3::new(-0.5, 0.0, 0.0)),
            Pose::yaw(0.25, Vector3::new(0.5, 0.1, 0.0)),
        ];
        save_poses(&path, &poses).unwrap();
        assert_eq!(load_poses(&path).unwrap(), poses);
    }
}
