use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CartPoint, ImageDims, PixelCoord};
use crate::tensor_file::{read_tensors, take, write_tensors, Tensor};

/// Largest index that survives a round trip through `f32` exactly.
const F32_EXACT: u64 = 1 << 24;

/// A world-frame point carrying a feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePoint {
    pub position: CartPoint,
    pub feature: Vec<f32>,
    pub camera: u32,
    /// Pixel index in the source panorama; part of the canonical order.
    pub pixel: u64,
}

pub fn save_points(bin: &Path, points: &[FeaturePoint]) -> Result<()> {
    let dim = points.first().map_or(0, |p| p.feature.len());
    let mut pos = Vec::with_capacity(points.len() * 3);
    let mut feat = Vec::with_capacity(points.len() * dim);
    let mut cams = Vec::with_capacity(points.len());
    let mut pix = Vec::with_capacity(points.len());
    for p in points {
        if p.feature.len() != dim {
            return Err(Error::ShapeMismatch("feature points of mixed dimension".into()));
        }
        if p.pixel >= F32_EXACT || u64::from(p.camera) >= F32_EXACT {
            return Err(Error::TensorFile(format!("index {} too large for the point file", p.pixel)));
        }
        pos.extend(p.position.iter().map(|v| *v as f32));
        feat.extend_from_slice(&p.feature);
        cams.push(p.camera as f32);
        pix.push(p.pixel as f32);
    }
    let n = points.len();
    write_tensors(
        bin,
        "feature_points",
        &[
            Tensor::new("positions", vec![n, 3], pos)?,
            Tensor::new("features", vec![n, dim], feat)?,
            Tensor::new("cameras", vec![n], cams)?,
            Tensor::new("pixels", vec![n], pix)?,
        ],
    )
}

pub fn load_points(bin: &Path) -> Result<Vec<FeaturePoint>> {
    let (_, t) = read_tensors(bin)?;
    let feats = t
        .iter()
        .find(|x| x.name == "features")
        .ok_or_else(|| Error::TensorFile("missing tensor features".into()))?;
    let (n, dim) = match feats.shape.as_slice() {
        [n, d] => (*n, *d),
        s => return Err(Error::ShapeMismatch(format!("features shape {s:?}"))),
    };
    let pos = take(&t, "positions", &[n, 3])?;
    let cams = take(&t, "cameras", &[n])?;
    let pix = take(&t, "pixels", &[n])?;
    Ok((0..n)
        .map(|i| FeaturePoint {
            position: Vector3::new(pos.data[3 * i] as f64, pos.data[3 * i + 1] as f64, pos.data[3 * i + 2] as f64),
            feature: feats.data[i * dim..(i + 1) * dim].to_vec(),
            camera: cams.data[i] as u32,
            pixel: pix.data[i] as u64,
        })
        .collect())
}

/// Equirectangular feature panorama, `H x W x dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    dims: ImageDims,
    dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(dims: ImageDims, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.pixel_count() * dim || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{}x{dim} feature map",
                data.len(),
                dims.height(),
                dims.width()
            )));
        }
        Ok(Self { dims, dim, data })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bilinear sample at a continuous pixel position, wrapping
    /// horizontally and clamping rows (pixel centers at `i + 0.5`).
    pub fn sample(&self, px: PixelCoord, out: &mut [f64]) {
        let w = self.dims.width() as isize;
        let h = self.dims.height();
        let x = px.u - 0.5;
        let y = (px.v - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let c0 = (x0 as isize).rem_euclid(w) as usize;
        let c1 = (x0 as isize + 1).rem_euclid(w) as usize;
        let r0 = y0 as usize;
        let r1 = (r0 + 1).min(h - 1);
        out.iter_mut().for_each(|v| *v = 0.0);
        let wu = w as usize;
        for (r, c, wgt) in [
            (r0, c0, (1.0 - fx) * (1.0 - fy)),
            (r0, c1, fx * (1.0 - fy)),
            (r1, c0, (1.0 - fx) * fy),
            (r1, c1, fx * fy),
        ] {
            if wgt == 0.0 {
                continue;
            }
            let o = (r * wu + c) * self.dim;
            for (slot, v) in out.iter_mut().zip(&self.data[o..o + self.dim]) {
                *slot += wgt * *v as f64;
            }
        }
    }

    pub fn save(&self, bin: &Path) -> Result<()> {
        write_tensors(
            bin,
            "feature_map",
            &[Tensor::new(
                "features",
                vec![self.dims.height(), self.dims.width(), self.dim],
                self.data.clone(),
            )?],
        )
    }

    pub fn load(bin: &Path) -> Result<Self> {
        let (_, t) = read_tensors(bin)?;
        let f = t
            .iter()
            .find(|x| x.name == "features")
            .ok_or_else(|| Error::TensorFile("missing tensor features".into()))?;
        match f.shape.as_slice() {
            [h, w, d] => Self::new(ImageDims::new(*w, *h)?, *d, f.data.clone()),
            s => Err(Error::ShapeMismatch(format!("feature map shape {s:?}"))),
        }
    }
}
