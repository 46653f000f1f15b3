use nalgebra::Matrix3;

use super::{composite, splat_from_cov, with_threads, Canvas, RenderOptions, Splat2D};
use crate::error::Result;
use crate::gaussian::GaussianCloud;
use crate::geometry::{direction_from_angles, equirect_jacobian, equirect_project, ImageDims, Pose};
use crate::panorama::Panorama;

/// Renders `cloud` (world frame) from a panoramic camera at `pose`
/// directly onto the equirectangular image.
pub fn render_equirect(
    cloud: &GaussianCloud,
    pose: &Pose,
    dims: ImageDims,
    opts: &RenderOptions,
) -> Result<Panorama> {
    opts.validate()?;
    with_threads(opts.threads, || {
        let splats = project_all(cloud, pose, dims, opts);
        let canvas = Canvas {
            width: dims.width(),
            height: dims.height(),
            wrap: true,
        };
        let shaded = composite(&canvas, splats, opts);
        let mut pano = Panorama::filled(dims, opts.background);
        for (i, px) in shaded.into_iter().enumerate() {
            pano.rgb[i] = px.rgb;
            pano.depth[i] = px.depth;
            pano.alpha[i] = px.alpha;
        }
        Ok(pano)
    })
}

fn project_all(cloud: &GaussianCloud, pose: &Pose, dims: ImageDims, opts: &RenderOptions) -> Vec<Splat2D> {
    use rayon::prelude::*;
    let rot = *pose.rotation();
    let clamp = opts.pole_clamp_deg.to_radians();
    let half_w = dims.width() as f64 * 0.5;
    cloud
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let p = pose.to_camera(&g.position);
            let d = p.norm();
            if !(d >= opts.near) {
                return None;
            }
            let center = equirect_project(&p, dims).ok()?;
            let rho = p.x.hypot(p.z);
            let lat = p.y.atan2(rho);
            let pj = if lat.abs() > clamp {
                let az = if rho > 0.0 { p.x.atan2(p.z) } else { 0.0 };
                direction_from_angles(az, clamp.copysign(lat)) * d
            } else {
                p
            };
            let j = equirect_jacobian(&pj, dims).ok()?;
            let sigma: Matrix3<f64> = rot.transpose() * g.covariance() * rot;
            let cov = j * sigma * j.transpose();
            let mut s = splat_from_cov(
                center.u,
                center.v,
                [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]],
                d,
                g.opacity,
                [g.color.x, g.color.y, g.color.z],
                index,
                opts,
            )?;
            s.extent[0] = s.extent[0].min(half_w);
            Some(s)
        })
        .collect()
}
