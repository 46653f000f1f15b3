use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cells along the radial, vertical and angular axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRes {
    pub n_r: usize,
    pub n_z: usize,
    pub n_theta: usize,
}

impl GridRes {
    pub const fn new(n_r: usize, n_z: usize, n_theta: usize) -> Self {
        Self { n_r, n_z, n_theta }
    }

    pub fn dense_cells(&self) -> usize {
        self.n_r * self.n_z * self.n_theta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriplaneConfig {
    /// Cylinder radius, meters.
    pub r0: f64,
    /// Half of the vertical span, meters; the cylinder covers `[-z0, z0]`.
    pub z0: f64,
    pub coarse: GridRes,
    /// Sampling resolution of the image attention.
    pub fine: GridRes,
    pub feature_dim: usize,
}

impl Default for TriplaneConfig {
    fn default() -> Self {
        Self {
            r0: 10.0,
            z0: 5.0,
            coarse: GridRes::new(16, 64, 128),
            fine: GridRes::new(8, 32, 64),
            feature_dim: 16,
        }
    }
}

impl TriplaneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("coarse", self.coarse), ("fine", self.fine)] {
            if g.n_r < 2 || g.n_z < 2 || g.n_theta < 2 {
                return Err(Error::Config(format!("{name} resolutions must be >= 2, got {g:?}")));
            }
        }
        if !(self.r0 > 0.0 && self.z0 > 0.0 && self.r0.is_finite() && self.z0.is_finite()) {
            return Err(Error::Config("r0 and z0 must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }

    /// Cell extents `(Δr, Δθ, Δz)` of a grid over this cylinder.
    pub fn extents(&self, g: &GridRes) -> (f64, f64, f64) {
        (
            self.r0 / g.n_r as f64,
            TAU / g.n_theta as f64,
            2.0 * self.z0 / g.n_z as f64,
        )
    }

    pub fn cell_extents(&self) -> (f64, f64, f64) {
        self.extents(&self.coarse)
    }
}

/// Cells stored by the three planes of a grid.
pub fn storage_cells(g: &GridRes) -> usize {
    g.n_theta * g.n_z + g.n_z * g.n_r + g.n_r * g.n_theta
}
