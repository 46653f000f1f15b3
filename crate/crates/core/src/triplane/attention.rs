use rayon::prelude::*;

use super::config::TriplaneConfig;
use super::features::FeatureMap;
use super::grid::{Plane, PlaneKind, TriplaneGrid};
use super::params::AttentionParams;
use crate::error::{Error, Result};
use crate::geometry::{cyl_to_cart, equirect_project, CartPoint, CylCoord, CylOffset, PixelCoord, Pose};

/// Max-subtracted softmax, accumulated in `f64`.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// Query projected back into key space: `Wkᵀ Wq f / √D_a`, so that the
/// score of a raw key vector `x` is a plain dot product.
fn key_space_query(params: &AttentionParams, f: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; params.attn_dim()];
    params.query.apply(f, &mut q);
    let mut qt = vec![0.0; params.key_dim()];
    params.key.apply_transpose(&q, &mut qt);
    let scale = 1.0 / (params.attn_dim() as f64).sqrt();
    qt.iter_mut().for_each(|v| *v *= scale);
    qt
}

fn dot(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * *y as f64).sum()
}

/// `f + Wo Wv (Σ w x)`.
fn residual(params: &AttentionParams, f: &[f32], mixed: &[f64]) -> Vec<f32> {
    let mut v = vec![0.0; params.attn_dim()];
    params.value.apply(mixed, &mut v);
    let mut o = vec![0.0; params.feature_dim()];
    params.output.apply(&v, &mut o);
    f.iter().zip(&o).map(|(a, b)| (*a as f64 + b) as f32).collect()
}

fn to_f64(f: &[f32]) -> Vec<f64> {
    f.iter().map(|v| *v as f64).collect()
}

/// Keys a cross-plane query at `(row, col)` of plane `kind` attends to:
/// the cells of the other two planes sharing its coordinates, along the
/// missing axis.
fn cross_keys<'a>(grid: &'a TriplaneGrid, kind: PlaneKind, row: usize, col: usize) -> Vec<&'a [f32]> {
    let g = grid.config.coarse;
    match kind {
        // (θ=i, z=j): sweep r
        PlaneKind::ThetaZ => (0..g.n_r)
            .map(|k| grid.z_r.cell(col, k))
            .chain((0..g.n_r).map(|k| grid.r_theta.cell(k, row)))
            .collect(),
        // (z=j, r=k): sweep θ
        PlaneKind::ZR => (0..g.n_theta)
            .map(|i| grid.theta_z.cell(i, row))
            .chain((0..g.n_theta).map(|i| grid.r_theta.cell(col, i)))
            .collect(),
        // (r=k, θ=i): sweep z
        PlaneKind::RTheta => (0..g.n_z)
            .map(|j| grid.theta_z.cell(col, j))
            .chain((0..g.n_z).map(|j| grid.z_r.cell(j, row)))
            .collect(),
    }
}

/// Attention weights of one cross-plane query.
pub fn cross_plane_weights(
    grid: &TriplaneGrid,
    params: &AttentionParams,
    kind: PlaneKind,
    row: usize,
    col: usize,
) -> Result<Vec<f64>> {
    let d = grid.config.feature_dim;
    params.check(d, d)?;
    let qt = key_space_query(params, &to_f64(grid.plane(kind).cell(row, col)));
    let scores: Vec<f64> = cross_keys(grid, kind, row, col).iter().map(|x| dot(&qt, x)).collect();
    Ok(softmax(&scores))
}

fn map_plane(src: &Plane, f: impl Fn(usize, usize) -> Vec<f32> + Sync) -> Plane {
    let rows: Vec<Vec<f32>> = (0..src.rows)
        .into_par_iter()
        .map(|r| (0..src.cols).flat_map(|c| f(r, c)).collect())
        .collect();
    Plane {
        rows: src.rows,
        cols: src.cols,
        dim: src.dim,
        data: rows.concat(),
    }
}

/// One residual cross-plane pass. All three planes read the same input.
pub fn cross_plane_attention(grid: &TriplaneGrid, params: &AttentionParams) -> Result<TriplaneGrid> {
    grid.check()?;
    let d = grid.config.feature_dim;
    params.check(d, d)?;
    let pass = |kind: PlaneKind| {
        let plane = grid.plane(kind);
        map_plane(plane, |row, col| {
            let f = plane.cell(row, col);
            let qt = key_space_query(params, &to_f64(f));
            let keys = cross_keys(grid, kind, row, col);
            let scores: Vec<f64> = keys.iter().map(|x| dot(&qt, x)).collect();
            let w = softmax(&scores);
            let mut mixed = vec![0.0; d];
            for (wk, x) in w.iter().zip(&keys) {
                for (m, v) in mixed.iter_mut().zip(x.iter()) {
                    *m += wk * *v as f64;
                }
            }
            residual(params, f, &mixed)
        })
    };
    Ok(TriplaneGrid {
        config: grid.config.clone(),
        origin: grid.origin,
        theta_z: pass(PlaneKind::ThetaZ),
        z_r: pass(PlaneKind::ZR),
        r_theta: pass(PlaneKind::RTheta),
    })
}

/// Triplane-local sample points of an image-attention query: fine-grid
/// centers along the plane's missing axis, coarse centers on the others.
pub fn image_sample_points(cfg: &TriplaneConfig, kind: PlaneKind, row: usize, col: usize) -> Vec<CartPoint> {
    let (dr, dt, dz) = cfg.cell_extents();
    let (fr, ft, fz) = cfg.extents(&cfg.fine);
    let center = |i: usize, step: f64| (i as f64 + 0.5) * step;
    let fine = cfg.fine;
    let coords: Vec<CylCoord> = match kind {
        PlaneKind::ThetaZ => (0..fine.n_r)
            .map(|k| CylCoord::new(center(k, fr), center(row, dt), -cfg.z0 + center(col, dz)))
            .collect(),
        PlaneKind::ZR => (0..fine.n_theta)
            .map(|i| CylCoord::new(center(col, dr), center(i, ft), -cfg.z0 + center(row, dz)))
            .collect(),
        PlaneKind::RTheta => (0..fine.n_z)
            .map(|j| CylCoord::new(center(row, dr), center(col, dt), -cfg.z0 + center(j, fz)))
            .collect(),
    };
    coords
        .iter()
        .map(|c| cyl_to_cart(c, &CylOffset::ZERO).expect("cell centers have positive radius"))
        .collect()
}

/// Where each sample point of a query lands in a view's feature map;
/// `None` for points at the view's poles.
pub fn image_sample_pixels(
    grid: &TriplaneGrid,
    kind: PlaneKind,
    row: usize,
    col: usize,
    pose: &Pose,
    map: &FeatureMap,
) -> Vec<Option<PixelCoord>> {
    image_sample_points(&grid.config, kind, row, col)
        .iter()
        .map(|p| equirect_project(&pose.to_camera(&grid.origin.to_world(p)), map.dims()).ok())
        .collect()
}

fn check_views(grid: &TriplaneGrid, maps: &[FeatureMap], poses: &[Pose], params: &AttentionParams) -> Result<()> {
    if maps.len() < poses.len() {
        return Err(Error::MissingFeatureMap(maps.len()));
    }
    if poses.is_empty() {
        return Err(Error::MissingFeatureMap(0));
    }
    for m in &maps[..poses.len()] {
        params.check(grid.config.feature_dim, m.dim())?;
    }
    Ok(())
}

/// Sampled key vectors of one query, flattened over views then points.
fn image_keys(grid: &TriplaneGrid, maps: &[FeatureMap], poses: &[Pose], kind: PlaneKind, row: usize, col: usize) -> Vec<Vec<f64>> {
    let mut keys = Vec::new();
    for (pose, map) in poses.iter().zip(maps) {
        for px in image_sample_pixels(grid, kind, row, col, pose, map).into_iter().flatten() {
            let mut x = vec![0.0; map.dim()];
            map.sample(px, &mut x);
            keys.push(x);
        }
    }
    keys
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attention weights of one image-attention query over all valid
/// (view, sample) pairs.
pub fn image_attention_weights(
    grid: &TriplaneGrid,
    maps: &[FeatureMap],
    poses: &[Pose],
    params: &AttentionParams,
    kind: PlaneKind,
    row: usize,
    col: usize,
) -> Result<Vec<f64>> {
    check_views(grid, maps, poses, params)?;
    let qt = key_space_query(params, &to_f64(grid.plane(kind).cell(row, col)));
    let scores: Vec<f64> = image_keys(grid, maps, poses, kind, row, col)
        .iter()
        .map(|x| dot64(&qt, x))
        .collect();
    Ok(softmax(&scores))
}

/// One residual triplane-to-image pass against the feature panoramas of
/// the source views. `maps[v]` belongs to `poses[v]`; queries without
/// any valid sample keep their feature.
pub fn image_attention(
    grid: &TriplaneGrid,
    maps: &[FeatureMap],
    poses: &[Pose],
    params: &AttentionParams,
) -> Result<TriplaneGrid> {
    grid.check()?;
    check_views(grid, maps, poses, params)?;
    let key_dim = params.key_dim();
    let pass = |kind: PlaneKind| {
        let plane = grid.plane(kind);
        map_plane(plane, |row, col| {
            let f = plane.cell(row, col);
            let keys = image_keys(grid, maps, poses, kind, row, col);
            if keys.is_empty() {
                return f.to_vec();
            }
            let qt = key_space_query(params, &to_f64(f));
            let scores: Vec<f64> = keys.iter().map(|x| dot64(&qt, x)).collect();
            let w = softmax(&scores);
            let mut mixed = vec![0.0; key_dim];
            for (wk, x) in w.iter().zip(&keys) {
                for (m, v) in mixed.iter_mut().zip(x) {
                    *m += wk * v;
                }
            }
            residual(params, f, &mixed)
        })
    };
    Ok(TriplaneGrid {
        config: grid.config.clone(),
        origin: grid.origin,
        theta_z: pass(PlaneKind::ThetaZ),
        z_r: pass(PlaneKind::ZR),
        r_theta: pass(PlaneKind::RTheta),
    })
}
