use serde::{Deserialize, Serialize};

use super::config::TriplaneConfig;
use super::features::FeaturePoint;
use super::grid::{cell_of, shape_of, Plane, PlaneKind, TriplaneGrid};
use super::params::BaseEmbedding;
use crate::error::{Error, Result};
use crate::geometry::{cart_to_cyl, Pose};

/// Which feature points a camera's triplane aggregates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Points from every camera.
    #[default]
    Shared,
    /// Only points from the triplane's own camera.
    Isolated,
}

struct Accum {
    sum: Vec<f64>,
    count: Vec<u32>,
    dim: usize,
}

impl Accum {
    fn new(cells: usize, dim: usize) -> Self {
        Self {
            sum: vec![0.0; cells * dim],
            count: vec![0; cells],
            dim,
        }
    }

    fn add(&mut self, cell: usize, f: &[f32]) {
        self.count[cell] += 1;
        for (s, v) in self.sum[cell * self.dim..(cell + 1) * self.dim].iter_mut().zip(f) {
            *s += *v as f64;
        }
    }

    /// `base + mean` where anything landed, `base` elsewhere.
    fn finish(&self, base: &Plane) -> Plane {
        let mut out = base.clone();
        for (cell, &n) in self.count.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let o = cell * self.dim;
            for ch in 0..self.dim {
                let mean = self.sum[o + ch] / n as f64;
                out.data[o + ch] = (base.data[o + ch] as f64 + mean) as f32;
            }
        }
        out
    }
}

/// Builds the triplane of camera `camera` placed at `origin` by mean-pooling
/// the features of all in-bounds points into their three plane cells.
///
/// Points are visited in `(camera, pixel)` order, so the result does not
/// depend on the order of `points`.
pub fn init_from_points(
    points: &[FeaturePoint],
    cfg: &TriplaneConfig,
    origin: &Pose,
    camera: u32,
    mode: InitMode,
    base: &BaseEmbedding,
) -> Result<TriplaneGrid> {
    cfg.validate()?;
    let g = cfg.coarse;
    let d = cfg.feature_dim;
    for k in PlaneKind::ALL {
        let (b, want) = (base.plane(k), shape_of(k, cfg));
        if (b.rows, b.cols, b.dim) != want {
            return Err(Error::ShapeMismatch(format!("base plane {} does not match the grid", k.name())));
        }
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| (points[i].camera, points[i].pixel));

    let mut tz = Accum::new(g.n_theta * g.n_z, d);
    let mut zr = Accum::new(g.n_z * g.n_r, d);
    let mut rt = Accum::new(g.n_r * g.n_theta, d);
    for i in order {
        let p = &points[i];
        if mode == InitMode::Isolated && p.camera != camera {
            continue;
        }
        if p.feature.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "feature point of dim {} for a grid of dim {d}",
                p.feature.len()
            )));
        }
        let c = cart_to_cyl(&origin.to_camera(&p.position));
        let Ok(idx) = cell_of(&c, cfg) else {
            continue;
        };
        tz.add(idx.theta * g.n_z + idx.z, &p.feature);
        zr.add(idx.z * g.n_r + idx.r, &p.feature);
        rt.add(idx.r * g.n_theta + idx.theta, &p.feature);
    }
    Ok(TriplaneGrid {
        config: cfg.clone(),
        origin: *origin,
        theta_z: tz.finish(&base.theta_z),
        z_r: zr.finish(&base.z_r),
        r_theta: rt.finish(&base.r_theta),
    })
}
