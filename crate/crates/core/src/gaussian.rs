//! The splatting primitive and ordered collections of it.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CartPoint;

pub const MIN_SCALE: f64 = 1e-6;
pub const MAX_SCALE: f64 = 1e3;

/// Frame in which a cloud's positions are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    World,
    Camera(u32),
}

/// Which branch produced a Gaussian, and from which camera.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Unlabeled,
    Pixel { camera: u32 },
    Volume { camera: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: CartPoint,
    /// Per-axis standard deviations in meters.
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl Gaussian {
    pub fn new(
        position: CartPoint,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Result<Self> {
        let g = Self {
            position,
            scale,
            rotation,
            opacity,
            color,
        };
        g.check().map_err(|reason| Error::InvalidGaussian { index: 0, reason })?;
        Ok(g)
    }

    /// Isotropic, axis-aligned Gaussian.
    pub fn isotropic(position: CartPoint, sigma: f64, opacity: f64, color: Vector3<f64>) -> Result<Self> {
        Self::new(
            position,
            Vector3::repeat(sigma),
            UnitQuaternion::identity(),
            opacity,
            color,
        )
    }

    pub(crate) fn check(&self) -> std::result::Result<(), String> {
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite position {:?}", self.position));
        }
        // tolerate f32 quantization of log-scales at the range ends
        let lo = MIN_SCALE * (1.0 - 1e-5);
        let hi = MAX_SCALE * (1.0 + 1e-5);
        if !self.scale.iter().all(|s| *s >= lo && *s <= hi) {
            return Err(format!("scale {:?} outside [{MIN_SCALE}, {MAX_SCALE}]", self.scale));
        }
        let qn = self.rotation.as_ref().norm();
        if !((qn - 1.0).abs() <= 1e-6) {
            return Err(format!("quaternion norm {qn}"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(format!("color {:?} outside [0, 1]", self.color));
        }
        Ok(())
    }

    /// `Σ = R · diag(s)² · Rᵀ`, symmetrized so that `Σ == Σᵀ` exactly.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = self.scale.component_mul(&self.scale);
        let m = r * Matrix3::from_diagonal(&s2) * r.transpose();
        (m + m.transpose()) * 0.5
    }
}

/// Ordered Gaussians sharing one frame, with a source label per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    frame: Frame,
    gaussians: Vec<Gaussian>,
    sources: Vec<Source>,
}

impl GaussianCloud {
    pub fn new(frame: Frame) -> Self {
        Self {
            frame,
            gaussians: Vec::new(),
            sources: Vec::new(),
        }
    }

    /// Validates every Gaussian and labels all of them with `source`.
    pub fn from_gaussians(frame: Frame, gaussians: Vec<Gaussian>, source: Source) -> Result<Self> {
        let sources = vec![source; gaussians.len()];
        Self::with_sources(frame, gaussians, sources)
    }

    pub fn with_sources(frame: Frame, gaussians: Vec<Gaussian>, sources: Vec<Source>) -> Result<Self> {
        if gaussians.len() != sources.len() {
            return Err(Error::DimMismatch(format!(
                "{} gaussians but {} source labels",
                gaussians.len(),
                sources.len()
            )));
        }
        for (index, g) in gaussians.iter().enumerate() {
            g.check().map_err(|reason| Error::InvalidGaussian { index, reason })?;
        }
        Ok(Self {
            frame,
            gaussians,
            sources,
        })
    }

    pub fn push(&mut self, g: Gaussian, source: Source) -> Result<()> {
        g.check().map_err(|reason| Error::InvalidGaussian {
            index: self.gaussians.len(),
            reason,
        })?;
        self.gaussians.push(g);
        self.sources.push(source);
        Ok(())
    }

    #[inline]
    pub fn frame(&self) -> Frame {
        self.frame
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    #[inline]
    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    #[inline]
    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Gaussian, &Source)> {
        self.gaussians.iter().zip(self.sources.iter())
    }

    /// Replaces the colors, keeping order and every other field.
    pub fn with_colors(&self, colors: &[Vector3<f64>]) -> Result<Self> {
        if colors.len() != self.len() {
            return Err(Error::DimMismatch(format!(
                "{} colors for {} gaussians",
                colors.len(),
                self.len()
            )));
        }
        let gaussians = self
            .gaussians
            .iter()
            .zip(colors)
            .map(|(g, c)| Gaussian {
                color: *c,
                ..g.clone()
            })
            .collect();
        Self::with_sources(self.frame, gaussians, self.sources.clone())
    }

    /// Keeps the entries for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&Gaussian, &Source) -> bool) -> Self {
        let (gaussians, sources) = self
            .iter()
            .filter(|(g, s)| keep(g, s))
            .map(|(g, s)| (g.clone(), *s))
            .unzip();
        Self {
            frame: self.frame,
            gaussians,
            sources,
        }
    }
}

/// `a` followed by `b`. Both clouds must share a frame.
pub fn concat(a: &GaussianCloud, b: &GaussianCloud) -> Result<GaussianCloud> {
    if a.frame != b.frame {
        return Err(Error::FrameMismatch(a.frame, b.frame));
    }
    let mut gaussians = Vec::with_capacity(a.len() + b.len());
    gaussians.extend_from_slice(&a.gaussians);
    gaussians.extend_from_slice(&b.gaussians);
    let mut sources = Vec::with_capacity(a.len() + b.len());
    sources.extend_from_slice(&a.sources);
    sources.extend_from_slice(&b.sources);
    Ok(GaussianCloud {
        frame: a.frame,
        gaussians,
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Unit;
    use std::f64::consts::FRAC_PI_2;

    fn g(x: f64) -> Gaussian {
        Gaussian::isotropic(Vector3::new(x, 0.0, 1.0), 0.1, 0.5, Vector3::repeat(0.5)).unwrap()
    }

    #[test]
    fn covariance_identity_rotation() {
        let g = Gaussian::new(
            Vector3::zeros(),
            Vector3::new(1.0, 2.0, 3.0),
            UnitQuaternion::identity(),
            1.0,
            Vector3::zeros(),
        )
        .unwrap();
        assert_eq!(g.covariance(), Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0)));
    }

    #[test]
    fn covariance_quarter_turn_about_y() {
        let q = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::y()), FRAC_PI_2);
        let g = Gaussian::new(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0), q, 1.0, Vector3::zeros())
            .unwrap();
        assert_relative_eq!(
            g.covariance(),
            Matrix3::from_diagonal(&Vector3::new(9.0, 4.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_fields_rejected() {
        let bad_opacity = Gaussian::isotropic(Vector3::zeros(), 0.1, 1.5, Vector3::zeros());
        assert!(bad_opacity.is_err());
        let bad_scale = Gaussian::isotropic(Vector3::zeros(), 0.0, 0.5, Vector3::zeros());
        assert!(bad_scale.is_err());
        let bad_color = Gaussian::isotropic(Vector3::zeros(), 0.1, 0.5, Vector3::new(0.0, 2.0, 0.0));
        assert!(bad_color.is_err());
        let bad_pos = Gaussian::isotropic(Vector3::new(f64::NAN, 0.0, 0.0), 0.1, 0.5, Vector3::zeros());
        assert!(bad_pos.is_err());
    }

    #[test]
    fn concat_sizes_and_labels() {
        let a = GaussianCloud::from_gaussians(
            Frame::World,
            (0..3).map(|i| g(i as f64)).collect(),
            Source::Pixel { camera: 0 },
        )
        .unwrap();
        let b = GaussianCloud::from_gaussians(
            Frame::World,
            (0..5).map(|i| g(10.0 + i as f64)).collect(),
            Source::Volume { camera: 1 },
        )
        .unwrap();
        let c = concat(&a, &b).unwrap();
        assert_eq!(c.len(), 8);
        assert_eq!(c.gaussians()[..3], a.gaussians()[..]);
        assert_eq!(c.gaussians()[3..], b.gaussians()[..]);
        assert!(c.sources()[..3].iter().all(|s| *s == Source::Pixel { camera: 0 }));
        assert!(c.sources()[3..].iter().all(|s| *s == Source::Volume { camera: 1 }));

        let empty = GaussianCloud::new(Frame::World);
        assert_eq!(concat(&empty, &b).unwrap(), b);

        let cam = GaussianCloud::new(Frame::Camera(0));
        assert!(matches!(concat(&cam, &b), Err(Error::FrameMismatch(..))));
    }

    #[test]
    fn concat_is_associative() {
        let mk = |off: f64, n: usize| {
            GaussianCloud::from_gaussians(
                Frame::World,
                (0..n).map(|i| g(off + i as f64)).collect(),
                Source::Unlabeled,
            )
            .unwrap()
        };
        let (a, b, c) = (mk(0.0, 2), mk(5.0, 3), mk(20.0, 1));
        let left = concat(&concat(&a, &b).unwrap(), &c).unwrap();
        let right = concat(&a, &concat(&b, &c).unwrap()).unwrap();
        assert_eq!(left, right);
    }
}
