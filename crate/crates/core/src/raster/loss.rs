use crate::error::{Error, Result};
use crate::panorama::Panorama;

pub const PERCEPTUAL_WEIGHT: f64 = 0.05;
pub const DEPTH_WEIGHT: f64 = 0.1;

/// A perceptual distance between a render and its target.
pub trait PerceptualLoss {
    fn distance(&self, render: &Panorama, target: &Panorama) -> f64;
}

/// Stand-in for a learned perceptual metric; always zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPerceptual;

impl PerceptualLoss for ZeroPerceptual {
    fn distance(&self, _: &Panorama, _: &Panorama) -> f64 {
        0.0
    }
}

/// `L1(rgb) + 0.05 * perceptual + 0.1 * L1(depth)`.
///
/// The color term averages over all pixels and channels. The depth term
/// averages over pixels where the reference depth is non-empty, and is zero
/// if there are none.
pub fn composite_loss(
    render: &Panorama,
    gt_rgb: &Panorama,
    ref_depth: &Panorama,
    perceptual: &dyn PerceptualLoss,
) -> Result<f64> {
    render.check_same_dims(gt_rgb)?;
    render.check_same_dims(ref_depth)?;
    let n = render.rgb.len();
    if n == 0 {
        return Err(Error::DimMismatch("empty panorama".into()));
    }
    let mut l1 = 0.0f64;
    for (a, b) in render.rgb.iter().zip(&gt_rgb.rgb) {
        for k in 0..3 {
            l1 += (a[k] as f64 - b[k] as f64).abs();
        }
    }
    l1 /= (3 * n) as f64;

    let mut ld = 0.0f64;
    let mut m = 0usize;
    for (d, r) in render.depth.iter().zip(&ref_depth.depth) {
        if *r > 0.0 {
            ld += (*d as f64 - *r as f64).abs();
            m += 1;
        }
    }
    if m > 0 {
        ld /= m as f64;
    }
    let lp = perceptual.distance(render, gt_rgb);
    Ok(l1 + PERCEPTUAL_WEIGHT * lp + DEPTH_WEIGHT * ld)
}
