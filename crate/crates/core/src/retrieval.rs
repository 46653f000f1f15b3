//! Visibility-weighted color assignment for volume-branch Gaussians.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::geometry::{equirect_project, CartPoint, Pose};
use crate::panorama::Panorama;

/// One source camera: its image, a reference depth map and its pose.
#[derive(Clone, Debug)]
pub struct SourceView {
    pub rgb: Panorama,
    pub depth: Panorama,
    pub pose: Pose,
    pub index: u32,
}

impl SourceView {
    pub fn new(rgb: Panorama, depth: Panorama, pose: Pose, index: u32) -> Result<Self> {
        rgb.check_same_dims(&depth)?;
        Ok(Self { rgb, depth, pose, index })
    }
}

/// Map applied to the blended color.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorHead {
    #[default]
    Identity,
    /// `clamp(M c + b, 0, 1)`; `matrix` is row-major.
    Affine { matrix: [[f64; 3]; 3], bias: [f64; 3] },
}

impl ColorHead {
    pub fn apply(&self, c: Vector3<f64>) -> Vector3<f64> {
        match self {
            ColorHead::Identity => c,
            ColorHead::Affine { matrix, bias } => {
                let m = Matrix3::from_fn(|r, k| matrix[r][k]);
                (m * c + Vector3::from(*bias)).map(|v| v.clamp(0.0, 1.0))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalOptions {
    /// Softmax temperature in meters: `w ∝ exp(-s / T)`.
    pub temperature: f64,
    pub head: ColorHead,
    /// Color kept by Gaussians that no view sees.
    pub fallback: [f64; 3],
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            head: ColorHead::Identity,
            fallback: [0.5; 3],
        }
    }
}

impl RetrievalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !self.fallback.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::Config("fallback color outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// `d_g − d_o`: distance of `position` from the view's camera minus the
/// reference depth at its pixel. `None` when the point coincides with the
/// camera center or its pixel has no reference depth.
pub fn visibility_score(position: &CartPoint, view: &SourceView) -> Option<f64> {
    let local = view.pose.to_camera(position);
    let px = equirect_project(&local, view.depth.dims()).ok()?;
    let d_o = view.depth.sample_depth(px)?;
    Some(local.norm() - d_o)
}

/// Per-view outcome of a retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub color: Vector3<f64>,
    /// `(view index, weight)` for every visible view.
    pub weights: Vec<(u32, f64)>,
}

/// Softmax of `-s / T`, max-subtracted.
pub fn visibility_weights(scores: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = scores.iter().map(|s| -s / temperature).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn retrieve_color(position: &CartPoint, views: &[SourceView], opts: &RetrievalOptions) -> Result<Retrieved> {
    let mut scores = Vec::with_capacity(views.len());
    let mut colors = Vec::with_capacity(views.len());
    let mut ids = Vec::with_capacity(views.len());
    for v in views {
        let Some(s) = visibility_score(position, v) else {
            continue;
        };
        let px = equirect_project(&v.pose.to_camera(position), v.rgb.dims())?;
        scores.push(s);
        colors.push(v.rgb.sample_rgb(px));
        ids.push(v.index);
    }
    if scores.is_empty() {
        return Err(Error::FullyOccluded);
    }
    let w = visibility_weights(&scores, opts.temperature);
    let blend = w.iter().zip(&colors).fold(Vector3::zeros(), |acc, (wi, c)| acc + c * *wi);
    Ok(Retrieved {
        color: opts.head.apply(blend),
        weights: ids.into_iter().zip(w).collect(),
    })
}

/// Recolors every Gaussian of `cloud`; order, geometry and sources are
/// kept. Returns the cloud and the number of Gaussians that fell back.
pub fn colorize_cloud(cloud: &GaussianCloud, views: &[SourceView], opts: &RetrievalOptions) -> Result<(GaussianCloud, usize)> {
    opts.validate()?;
    let results: Vec<Result<Option<Vector3<f64>>>> = cloud
        .gaussians()
        .par_iter()
        .map(|g| match retrieve_color(&g.position, views, opts) {
            Ok(r) => Ok(Some(r.color.map(|c| c.clamp(0.0, 1.0)))),
            Err(Error::FullyOccluded) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let fallback = Vector3::from(opts.fallback);
    let mut colors = Vec::with_capacity(results.len());
    let mut occluded = 0;
    for r in results {
        colors.push(r?.unwrap_or_else(|| {
            occluded += 1;
            fallback
        }));
    }
    Ok((cloud.with_colors(&colors)?, occluded))
}
