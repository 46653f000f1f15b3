use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::{composite, splat_from_cov, with_threads, Canvas, RenderOptions, Shaded, Splat2D};
use crate::error::Result;
use crate::gaussian::GaussianCloud;
use crate::geometry::{pixel_ray, CartPoint, ImageDims, Pose};
use crate::panorama::Panorama;

/// Centers further than this (in tangent units) off the face axis are culled.
const FACE_CULL: f64 = 3.0;

/// One 90° pinhole face. Each face camera looks down its local `+z` with
/// `x` right and `y` down, like the panoramic camera itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeFace {
    Front,
    Right,
    Back,
    Left,
    Up,
    Down,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::Front,
        CubeFace::Right,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Up,
        CubeFace::Down,
    ];

    /// Rows are the face axes expressed in the panoramic camera frame.
    pub fn basis(self) -> Matrix3<f64> {
        let (x, y, z) = match self {
            CubeFace::Front => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
            CubeFace::Right => ([0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
            CubeFace::Back => ([-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]),
            CubeFace::Left => ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]),
            CubeFace::Up => ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]),
            CubeFace::Down => ([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
        };
        Matrix3::new(x[0], x[1], x[2], y[0], y[1], y[2], z[0], z[1], z[2])
    }

    /// Viewing direction in the panoramic camera frame.
    pub fn direction(self) -> CartPoint {
        self.basis().row(2).transpose()
    }

    /// Face owning direction `d`: the dominant axis, ties resolved in
    /// `ALL` order.
    pub fn owning(d: &CartPoint) -> CubeFace {
        let mut best = CubeFace::Front;
        let mut best_v = f64::NEG_INFINITY;
        for f in CubeFace::ALL {
            let v = f.direction().dot(d);
            if v > best_v {
                best_v = v;
                best = f;
            }
        }
        best
    }
}

fn face_size(dims: ImageDims, opts: &RenderOptions) -> usize {
    if opts.cube_face_size > 0 {
        opts.cube_face_size
    } else {
        (dims.width() as f64 / std::f64::consts::PI).ceil() as usize
    }
}

/// Renders six perspective faces and resamples them bilinearly onto the
/// equirectangular grid.
pub fn render_cubemap(
    cloud: &GaussianCloud,
    pose: &Pose,
    dims: ImageDims,
    opts: &RenderOptions,
) -> Result<Panorama> {
    opts.validate()?;
    with_threads(opts.threads, || {
        let n = face_size(dims, opts);
        let faces: Vec<Vec<Shaded>> = CubeFace::ALL
            .iter()
            .map(|f| render_face(cloud, pose, *f, n, opts))
            .collect();
        let w = dims.width();
        let rows: Vec<Vec<Shaded>> = (0..dims.height())
            .into_par_iter()
            .map(|row| {
                (0..w)
                    .map(|col| {
                        let d = pixel_ray(col, row, dims);
                        let face = CubeFace::owning(&d);
                        let q = face.basis() * d;
                        let half = n as f64 * 0.5;
                        let fu = half * q.x / q.z + half;
                        let fv = half * q.y / q.z + half;
                        sample_face(&faces[face as usize], n, fu, fv)
                    })
                    .collect()
            })
            .collect();
        let mut pano = Panorama::filled(dims, opts.background);
        for (i, px) in rows.into_iter().flatten().enumerate() {
            pano.rgb[i] = px.rgb;
            pano.depth[i] = px.depth;
            pano.alpha[i] = px.alpha;
        }
        Ok(pano)
    })
}

fn render_face(cloud: &GaussianCloud, pose: &Pose, face: CubeFace, n: usize, opts: &RenderOptions) -> Vec<Shaded> {
    let basis = face.basis();
    let rot = basis * pose.rotation().transpose();
    let f = n as f64 * 0.5;
    let splats: Vec<Splat2D> = cloud
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let pc = pose.to_camera(&g.position);
            let d = pc.norm();
            if !(d >= opts.near) {
                return None;
            }
            let p: Vector3<f64> = basis * pc;
            if p.z < opts.near || (p.x / p.z).abs() > FACE_CULL || (p.y / p.z).abs() > FACE_CULL {
                return None;
            }
            let iz = 1.0 / p.z;
            let j = Matrix2x3::new(f * iz, 0.0, -f * p.x * iz * iz, 0.0, f * iz, -f * p.y * iz * iz);
            let sigma = rot * g.covariance() * rot.transpose();
            let cov = j * sigma * j.transpose();
            splat_from_cov(
                f * p.x * iz + f,
                f * p.y * iz + f,
                [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]],
                d,
                g.opacity,
                [g.color.x, g.color.y, g.color.z],
                index,
                opts,
            )
        })
        .collect();
    let canvas = Canvas {
        width: n,
        height: n,
        wrap: false,
    };
    composite(&canvas, splats, opts)
}

/// Bilinear sample with clamped edges; pixel centers at `i + 0.5`.
fn sample_face(face: &[Shaded], n: usize, fu: f64, fv: f64) -> Shaded {
    let max = (n - 1) as f64;
    let x = (fu - 0.5).clamp(0.0, max);
    let y = (fv - 0.5).clamp(0.0, max);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (c0, r0) = (x0 as usize, y0 as usize);
    let (c1, r1) = ((c0 + 1).min(n - 1), (r0 + 1).min(n - 1));
    let taps = [
        (r0 * n + c0, (1.0 - fx) * (1.0 - fy)),
        (r0 * n + c1, fx * (1.0 - fy)),
        (r1 * n + c0, (1.0 - fx) * fy),
        (r1 * n + c1, fx * fy),
    ];
    let mut rgb = [0.0f64; 3];
    let mut alpha = 0.0;
    let mut depth = 0.0;
    let mut dw = 0.0;
    for (i, w) in taps {
        let s = &face[i];
        for k in 0..3 {
            rgb[k] += w * s.rgb[k] as f64;
        }
        alpha += w * s.alpha as f64;
        if s.depth > 0.0 {
            depth += w * s.depth as f64;
            dw += w;
        }
    }
    Shaded {
        rgb: rgb.map(|c| c as f32),
        depth: if dw > 0.0 { (depth / dw) as f32 } else { 0.0 },
        alpha: alpha as f32,
    }
}
