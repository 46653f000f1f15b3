use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;

use super::grid::{cell_center, CellIndex, TriplaneGrid, BOUNDS_TOL};
use super::params::DecoderParams;
use crate::error::Result;
use crate::gaussian::{Frame, Gaussian, GaussianCloud, Source, MAX_SCALE, MIN_SCALE};
use crate::geometry::{angle_diff, cart_to_cyl, cyl_jacobian, cyl_to_cart, transform_scale, CartPoint, CylOffset};

/// Color given to decoded Gaussians before retrieval.
pub const UNCOLORED: f64 = 0.5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense grid points in decode order: `θ` outermost, then `z`, then `r`.
pub fn grid_cells(grid: &TriplaneGrid) -> impl Iterator<Item = CellIndex> {
    let g = grid.config.coarse;
    (0..g.n_theta).flat_map(move |theta| (0..g.n_z).flat_map(move |z| (0..g.n_r).map(move |r| CellIndex { theta, z, r })))
}

/// Decodes one Gaussian per coarse grid point. Offsets stay within half a
/// cell on every axis; scales are bounded by the half-cell extents before
/// being carried through the cylindrical Jacobian. Positions and
/// rotations end up in the world frame of `grid.origin`.
pub fn decode_gaussians(grid: &TriplaneGrid, decoder: &DecoderParams, camera: u32) -> Result<GaussianCloud> {
    grid.check()?;
    decoder.check(grid.config.feature_dim)?;
    let g = grid.config.coarse;
    let (dr, dt, dz) = grid.config.cell_extents();
    let half = Vector3::new(dr / 2.0, dt / 2.0, dz / 2.0);
    let r_pose = UnitQuaternion::from_matrix(grid.origin.rotation());

    let rows: Vec<Result<Vec<Gaussian>>> = (0..g.n_theta)
        .into_par_iter()
        .map(|theta| {
            let mut out = Vec::with_capacity(g.n_z * g.n_r);
            for z in 0..g.n_z {
                for r in 0..g.n_r {
                    let c = cell_center(CellIndex { theta, z, r }, &grid.config);
                    let raw = decoder.forward(&grid.query_feature(&c)?);
                    let off = CylOffset::new(
                        raw[0].tanh() * half.x,
                        raw[1].tanh() * half.y,
                        raw[2].tanh() * half.z,
                    );
                    let local_scale = Vector3::new(
                        half.x * sigmoid(raw[3]),
                        half.y * sigmoid(raw[4]),
                        half.z * sigmoid(raw[5]),
                    )
                    .map(|s| s.max(MIN_SCALE));
                    let scale = transform_scale(&local_scale, &cyl_jacobian(&c, &off)?)?
                        .map(|s| s.clamp(MIN_SCALE, MAX_SCALE));
                    let q = Quaternion::new(raw[6], raw[7], raw[8], raw[9]);
                    let rot = if q.norm() > 1e-12 {
                        UnitQuaternion::from_quaternion(q)
                    } else {
                        UnitQuaternion::identity()
                    };
                    out.push(Gaussian::new(
                        grid.origin.to_world(&cyl_to_cart(&c, &off)?),
                        scale,
                        r_pose * rot,
                        sigmoid(raw[10]),
                        Vector3::repeat(UNCOLORED),
                    )?);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(g.dense_cells());
    for r in rows {
        all.extend(r?);
    }
    GaussianCloud::from_gaussians(Frame::World, all, Source::Volume { camera })
}

/// Whether a world point lies inside the curvilinear volume of `idx`.
pub fn in_cell(grid: &TriplaneGrid, idx: CellIndex, world: &CartPoint) -> bool {
    let (dr, dt, dz) = grid.config.cell_extents();
    let c = cart_to_cyl(&grid.origin.to_camera(world));
    let cc = cell_center(idx, &grid.config);
    let r_ok = (c.r - cc.r).abs() <= dr / 2.0 + BOUNDS_TOL;
    let z_ok = (c.z - cc.z).abs() <= dz / 2.0 + BOUNDS_TOL;
    let t_ok = c.r < BOUNDS_TOL || angle_diff(c.theta, cc.theta).abs() <= dt / 2.0 + BOUNDS_TOL;
    r_ok && z_ok && t_ok
}
