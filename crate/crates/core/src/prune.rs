//! Depth-guided pruning of Gaussians that disagree with reference depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianCloud};
use crate::geometry::{equirect_project, Pose, POLE_EPS};
use crate::panorama::Panorama;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneOptions {
    /// Meters of disagreement with the reference depth that count as deviating.
    pub deviation_threshold: f64,
    /// Opacity multiplier applied to Gaussians that deviate in every view.
    pub opacity_factor: f64,
    /// Gaussians whose resulting opacity falls below this are removed.
    pub opacity_floor: f64,
}

impl Default for PruneOptions {
    fn default() -> Self {
        Self {
            deviation_threshold: 0.5,
            opacity_factor: 0.1,
            opacity_floor: 1.0 / 255.0,
        }
    }
}

impl PruneOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.deviation_threshold > 0.0) {
            return Err(Error::Config("prune deviation_threshold must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity_factor) {
            return Err(Error::Config("prune opacity_factor must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity_floor) {
            return Err(Error::Config("prune opacity_floor must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Whether `g` deviates from the reference surface in every view that has
/// depth evidence for it. Views where the Gaussian projects onto an empty
/// pixel or onto the pole give no evidence; with no evidence at all the
/// Gaussian is kept as-is.
fn deviates_everywhere(g: &Gaussian, depth_maps: &[Panorama], poses: &[Pose], threshold: f64) -> bool {
    let mut evidence = false;
    for (map, pose) in depth_maps.iter().zip(poses) {
        let p = pose.to_camera(&g.position);
        if p.x * p.x + p.z * p.z <= POLE_EPS {
            continue;
        }
        let Ok(px) = equirect_project(&p, map.dims()) else {
            continue;
        };
        let Some(reference) = map.sample_depth(px) else {
            continue;
        };
        evidence = true;
        if (p.norm() - reference).abs() <= threshold {
            return false;
        }
    }
    evidence
}

/// Scales the opacity of Gaussians that deviate from the reference depth in
/// all views, then drops those below the opacity floor. Untouched Gaussians
/// are passed through unchanged.
pub fn depth_prune(
    cloud: &GaussianCloud,
    depth_maps: &[Panorama],
    poses: &[Pose],
    opts: &PruneOptions,
) -> Result<GaussianCloud> {
    opts.validate()?;
    if depth_maps.len() != poses.len() {
        return Err(Error::DimMismatch(format!(
            "{} depth maps for {} poses",
            depth_maps.len(),
            poses.len()
        )));
    }
    if let Some(first) = depth_maps.first() {
        for m in depth_maps {
            first.check_same_dims(m)?;
        }
    }
    let mut out = GaussianCloud::new(cloud.frame());
    for (g, s) in cloud.iter() {
        let mut g = g.clone();
        if deviates_everywhere(&g, depth_maps, poses, opts.deviation_threshold) {
            g.opacity *= opts.opacity_factor;
        }
        if g.opacity < opts.opacity_floor {
            continue;
        }
        out.push(g, *s)?;
    }
    Ok(out)
}
