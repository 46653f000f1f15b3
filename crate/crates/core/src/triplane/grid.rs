use std::path::{Path, PathBuf};

use exr::prelude::{AnyChannel, FlatSamples, Text};
use serde::{Deserialize, Serialize};

use super::config::TriplaneConfig;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, CylCoord, Pose};
use crate::panorama::write_channels;
use crate::tensor_file::{take, Tensor};

/// Tolerance on the bounded axes when locating a coordinate.
pub(crate) const BOUNDS_TOL: f64 = 1e-9;

/// A `rows x cols` grid of `dim`-vectors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        Self {
            rows,
            cols,
            dim,
            data: vec![0.0; rows * cols * dim],
        }
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let o = (row * self.cols + col) * self.dim;
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let o = (row * self.cols + col) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// Bilinear lookup at fractional cell-center coordinates. Axes flagged
    /// circular wrap, the others clamp.
    pub fn bilinear(&self, x_row: f64, x_col: f64, wrap: [bool; 2], out: &mut [f64]) {
        let (r0, r1, fr) = axis_taps(x_row, self.rows, wrap[0]);
        let (c0, c1, fc) = axis_taps(x_col, self.cols, wrap[1]);
        let taps = [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0, c1, (1.0 - fr) * fc),
            (r1, c0, fr * (1.0 - fc)),
            (r1, c1, fr * fc),
        ];
        for (r, c, w) in taps {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.cell(r, c)) {
                *o += w * *v as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn axis_taps(x: f64, n: usize, wrap: bool) -> (usize, usize, f64) {
    if wrap {
        let x0 = x.floor();
        let f = x - x0;
        let i0 = (x0 as i64).rem_euclid(n as i64) as usize;
        (i0, (i0 + 1) % n, f)
    } else {
        let x = x.clamp(0.0, (n - 1) as f64);
        let x0 = x.floor();
        let i0 = x0 as usize;
        ((i0), (i0 + 1).min(n - 1), x - x0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneKind {
    /// Indexed `(θ, z)`.
    ThetaZ,
    /// Indexed `(z, r)`.
    ZR,
    /// Indexed `(r, θ)`.
    RTheta,
}

impl PlaneKind {
    pub const ALL: [PlaneKind; 3] = [PlaneKind::ThetaZ, PlaneKind::ZR, PlaneKind::RTheta];

    pub fn name(self) -> &'static str {
        match self {
            PlaneKind::ThetaZ => "theta_z",
            PlaneKind::ZR => "z_r",
            PlaneKind::RTheta => "r_theta",
        }
    }
}

/// Integer cell address on the coarse grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub theta: usize,
    pub z: usize,
    pub r: usize,
}

/// The three feature planes together with their cylinder.
#[derive(Clone, Debug, PartialEq)]
pub struct TriplaneGrid {
    pub config: TriplaneConfig,
    /// Triplane-to-world transform; the cylinder axis is the local `+y`.
    pub origin: Pose,
    pub theta_z: Plane,
    pub z_r: Plane,
    pub r_theta: Plane,
}

impl TriplaneGrid {
    pub fn zeros(config: &TriplaneConfig, origin: Pose) -> Self {
        let g = config.coarse;
        let d = config.feature_dim;
        Self {
            config: config.clone(),
            origin,
            theta_z: Plane::zeros(g.n_theta, g.n_z, d),
            z_r: Plane::zeros(g.n_z, g.n_r, d),
            r_theta: Plane::zeros(g.n_r, g.n_theta, d),
        }
    }

    pub fn plane(&self, kind: PlaneKind) -> &Plane {
        match kind {
            PlaneKind::ThetaZ => &self.theta_z,
            PlaneKind::ZR => &self.z_r,
            PlaneKind::RTheta => &self.r_theta,
        }
    }

    pub fn plane_mut(&mut self, kind: PlaneKind) -> &mut Plane {
        match kind {
            PlaneKind::ThetaZ => &mut self.theta_z,
            PlaneKind::ZR => &mut self.z_r,
            PlaneKind::RTheta => &mut self.r_theta,
        }
    }

    pub fn check(&self) -> Result<()> {
        for k in PlaneKind::ALL {
            let (rows, cols, d) = shape_of(k, &self.config);
            let p = self.plane(k);
            if p.rows != rows || p.cols != cols || p.dim != d || p.data.len() != rows * cols * d {
                return Err(Error::ShapeMismatch(format!(
                    "plane {} is {}x{}x{}, expected {rows}x{cols}x{d}",
                    k.name(),
                    p.rows,
                    p.cols,
                    p.dim
                )));
            }
            if !p.is_finite() {
                return Err(Error::ShapeMismatch(format!("plane {} has non-finite features", k.name())));
            }
        }
        Ok(())
    }

    /// Sum of the three bilinear plane lookups at `c`.
    pub fn query_feature(&self, c: &CylCoord) -> Result<Vec<f64>> {
        check_bounds(c, &self.config)?;
        let (dr, dt, dz) = self.config.cell_extents();
        let xt = wrap_angle(c.theta) / dt - 0.5;
        let xz = (c.z + self.config.z0) / dz - 0.5;
        let xr = c.r / dr - 0.5;
        let mut out = vec![0.0; self.config.feature_dim];
        self.theta_z.bilinear(xt, xz, [true, false], &mut out);
        self.z_r.bilinear(xz, xr, [false, false], &mut out);
        self.r_theta.bilinear(xr, xt, [false, true], &mut out);
        Ok(out)
    }

    pub fn to_tensors(&self, prefix: &str) -> Vec<Tensor> {
        PlaneKind::ALL
            .iter()
            .map(|k| {
                let p = self.plane(*k);
                Tensor {
                    name: format!("{prefix}{}", k.name()),
                    shape: vec![p.rows, p.cols, p.dim],
                    data: p.data.clone(),
                }
            })
            .collect()
    }

    pub fn from_tensors(config: &TriplaneConfig, origin: Pose, tensors: &[Tensor], prefix: &str) -> Result<Self> {
        config.validate()?;
        let mut g = Self::zeros(config, origin);
        for k in PlaneKind::ALL {
            let p = g.plane_mut(k);
            let t = take(tensors, &format!("{prefix}{}", k.name()), &[p.rows, p.cols, p.dim])?;
            p.data.clone_from(&t.data);
        }
        g.check()?;
        Ok(g)
    }

    /// One EXR per plane (`<stem>_<plane>.exr`), width = columns, one float
    /// channel `fNN` per feature. Returns the written paths.
    pub fn dump_exr(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for k in PlaneKind::ALL {
            let p = self.plane(k);
            let path = dir.join(format!("{stem}_{}.exr", k.name()));
            let list = (0..p.dim)
                .map(|ch| {
                    let vals: Vec<f32> = (0..p.rows * p.cols).map(|i| p.data[i * p.dim + ch]).collect();
                    AnyChannel::new(Text::from(format!("f{ch:02}").as_str()), FlatSamples::F32(vals))
                })
                .collect();
            write_channels(&path, (p.cols, p.rows), list)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// `(rows, cols, dim)` of a plane on the coarse grid.
pub fn shape_of(kind: PlaneKind, cfg: &TriplaneConfig) -> (usize, usize, usize) {
    let g = cfg.coarse;
    let d = cfg.feature_dim;
    match kind {
        PlaneKind::ThetaZ => (g.n_theta, g.n_z, d),
        PlaneKind::ZR => (g.n_z, g.n_r, d),
        PlaneKind::RTheta => (g.n_r, g.n_theta, d),
    }
}

pub(crate) fn check_bounds(c: &CylCoord, cfg: &TriplaneConfig) -> Result<()> {
    if !(c.r >= 0.0 && c.r <= cfg.r0 + BOUNDS_TOL) {
        return Err(Error::OutOfBounds(format!("r = {} outside [0, {}]", c.r, cfg.r0)));
    }
    if !(c.z.abs() <= cfg.z0 + BOUNDS_TOL) {
        return Err(Error::OutOfBounds(format!("z = {} outside [-{}, {}]", c.z, cfg.z0, cfg.z0)));
    }
    if !c.theta.is_finite() {
        return Err(Error::OutOfBounds(format!("theta = {}", c.theta)));
    }
    Ok(())
}

/// Coarse cell containing `c`. Points on the outer boundaries belong to
/// the last cell.
pub fn cell_of(c: &CylCoord, cfg: &TriplaneConfig) -> Result<CellIndex> {
    check_bounds(c, cfg)?;
    let g = cfg.coarse;
    let (dr, dt, dz) = cfg.cell_extents();
    let r = ((c.r / dr).floor() as usize).min(g.n_r - 1);
    let z = (((c.z + cfg.z0) / dz).floor().max(0.0) as usize).min(g.n_z - 1);
    let theta = ((wrap_angle(c.theta) / dt).floor() as usize) % g.n_theta;
    Ok(CellIndex { theta, z, r })
}

pub fn cell_center(idx: CellIndex, cfg: &TriplaneConfig) -> CylCoord {
    let (dr, dt, dz) = cfg.cell_extents();
    CylCoord::new(
        (idx.r as f64 + 0.5) * dr,
        (idx.theta as f64 + 0.5) * dt,
        -cfg.z0 + (idx.z as f64 + 0.5) * dz,
    )
}
