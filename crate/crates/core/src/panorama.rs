//! Equirectangular image buffers (color, depth, accumulated alpha) and
//! their PNG/EXR persistence.

use std::path::Path;

use exr::prelude::*;
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{ImageDims, PixelCoord};

/// Row-major `W x H` panorama; index `row * W + col`.
#[derive(Clone, Debug, PartialEq)]
pub struct Panorama {
    dims: ImageDims,
    pub rgb: Vec<[f32; 3]>,
    /// Meters; `0` marks an empty pixel.
    pub depth: Vec<f32>,
    pub alpha: Vec<f32>,
}

impl Panorama {
    pub fn new(dims: ImageDims) -> Self {
        Self::filled(dims, [0.0; 3])
    }

    pub fn filled(dims: ImageDims, color: [f32; 3]) -> Self {
        let n = dims.pixel_count();
        Self {
            dims,
            rgb: vec![color; n],
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }

    /// Depth-only panorama (color black, alpha 1 where depth > 0).
    pub fn from_depth(dims: ImageDims, depth: Vec<f32>) -> Result<Self> {
        if depth.len() != dims.pixel_count() {
            return Err(Error::DimMismatch(format!(
                "{} depth samples for {}x{}",
                depth.len(),
                dims.width(),
                dims.height()
            )));
        }
        let alpha = depth.iter().map(|d| if *d > 0.0 { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            dims,
            rgb: vec![[0.0; 3]; dims.pixel_count()],
            depth,
            alpha,
        })
    }

    #[inline]
    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims.height()
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.dims.width() + col
    }

    pub fn check_same_dims(&self, other: &Panorama) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "{}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )));
        }
        Ok(())
    }

    /// Bilinear color lookup at a continuous pixel position, wrapping horizontally.
    pub fn sample_rgb(&self, px: PixelCoord) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (idx, w) in self.bilinear_taps(px) {
            let c = self.rgb[idx];
            acc += Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) * w;
        }
        acc
    }

    /// Bilinear depth lookup over the non-empty taps only. `None` when all
    /// four taps are empty.
    pub fn sample_depth(&self, px: PixelCoord) -> Option<f64> {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (idx, w) in self.bilinear_taps(px) {
            let d = self.depth[idx];
            if d > 0.0 && w > 0.0 {
                acc += d as f64 * w;
                wsum += w;
            }
        }
        if wsum > 0.0 {
            Some(acc / wsum)
        } else {
            // all weighted taps empty; a zero-weight valid tap doesn't count
            None
        }
    }

    /// Depth at the pixel containing `px`.
    pub fn nearest_depth(&self, px: PixelCoord) -> f64 {
        let w = self.width();
        let col = (px.u.floor() as isize).rem_euclid(w as isize) as usize;
        let row = (px.v.floor().max(0.0) as usize).min(self.height() - 1);
        self.depth[self.index(col, row)] as f64
    }

    /// Four `(index, weight)` taps; pixel centers sit at `i + 0.5`.
    pub(crate) fn bilinear_taps(&self, px: PixelCoord) -> [(usize, f64); 4] {
        let w = self.width() as isize;
        let h = self.height() as isize;
        let x = px.u - 0.5;
        let y = (px.v - 0.5).clamp(0.0, (h - 1) as f64);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let c0 = (x0 as isize).rem_euclid(w) as usize;
        let c1 = (x0 as isize + 1).rem_euclid(w) as usize;
        let r0 = y0 as usize;
        let r1 = (r0 + 1).min(h as usize - 1);
        let wu = self.width();
        [
            (r0 * wu + c0, (1.0 - fx) * (1.0 - fy)),
            (r0 * wu + c1, fx * (1.0 - fy)),
            (r1 * wu + c0, (1.0 - fx) * fy),
            (r1 * wu + c1, fx * fy),
        ]
    }

    /// Image shifted right by `k` columns (column `c` moves to `c + k mod W`).
    pub fn circular_shift(&self, k: isize) -> Panorama {
        let w = self.width();
        let mut out = self.clone();
        for row in 0..self.height() {
            for col in 0..w {
                let dst = (col as isize + k).rem_euclid(w as isize) as usize;
                let s = self.index(col, row);
                let d = self.index(dst, row);
                out.rgb[d] = self.rgb[s];
                out.depth[d] = self.depth[s];
                out.alpha[d] = self.alpha[s];
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.width() as u32, self.height() as u32);
        for (i, p) in img.pixels_mut().enumerate() {
            let c = self.rgb[i];
            *p = image::Rgb(c.map(to_u8));
        }
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| image_err(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Panorama> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
        let dims = ImageDims::new(img.width() as usize, img.height() as usize)?;
        let mut pano = Panorama::new(dims);
        for (i, p) in img.pixels().enumerate() {
            pano.rgb[i] = p.0.map(|v| v as f32 / 255.0);
            pano.alpha[i] = 1.0;
        }
        Ok(pano)
    }

    pub fn save_rgb_exr(&self, path: &Path) -> Result<()> {
        let n = self.dims.pixel_count();
        let mut channels: Vec<Vec<f32>> = vec![Vec::with_capacity(n); 3];
        for c in &self.rgb {
            for (ch, v) in channels.iter_mut().zip(c) {
                ch.push(*v);
            }
        }
        let mut iter = channels.into_iter();
        let list: Vec<AnyChannel<FlatSamples>> = ["R", "G", "B"]
            .iter()
            .map(|name| AnyChannel::new(*name, FlatSamples::F32(iter.next().unwrap_or_default())))
            .collect();
        write_channels(path, (self.width(), self.height()), list)
    }

    pub fn save_depth_exr(&self, path: &Path) -> Result<()> {
        let list = vec![AnyChannel::new("Z", FlatSamples::F32(self.depth.clone()))];
        write_channels(path, (self.width(), self.height()), list)
    }

    /// Loads an RGB EXR written by [`Panorama::save_rgb_exr`].
    pub fn load_rgb_exr(path: &Path) -> Result<Panorama> {
        let (dims, mut channels) = read_channels(path)?;
        let mut take = |name: &str| {
            channels
                .iter()
                .position(|(n, _)| n == name)
                .map(|i| channels.swap_remove(i).1)
                .ok_or_else(|| Error::Image {
                    path: path.to_path_buf(),
                    message: format!("missing channel {name}"),
                })
        };
        let r = take("R")?;
        let g = take("G")?;
        let b = take("B")?;
        let mut pano = Panorama::new(dims);
        for i in 0..dims.pixel_count() {
            pano.rgb[i] = [r[i], g[i], b[i]];
            pano.alpha[i] = 1.0;
        }
        Ok(pano)
    }

    /// Loads a single-channel float depth EXR (channel `Z`, or the only channel).
    pub fn load_depth_exr(path: &Path) -> Result<Panorama> {
        let (dims, channels) = read_channels(path)?;
        let depth = match channels.iter().position(|(n, _)| n == "Z") {
            Some(i) => channels[i].1.clone(),
            None if channels.len() == 1 => channels[0].1.clone(),
            None => {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    message: "no Z channel".into(),
                })
            }
        };
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: "depth must be finite and non-negative".into(),
            });
        }
        Panorama::from_depth(dims, depth)
    }

    /// Loads color from PNG or EXR depending on the extension.
    pub fn load_rgb(path: &Path) -> Result<Panorama> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("exr") => Self::load_rgb_exr(path),
            _ => Self::load_png(path),
        }
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes named float channels as one EXR layer.
pub(crate) fn write_channels(
    path: &Path,
    size: (usize, usize),
    list: Vec<AnyChannel<FlatSamples>>,
) -> Result<()> {
    let layer = Layer::new(
        size,
        LayerAttributes::default(),
        Encoding::FAST_LOSSLESS,
        AnyChannels::sort(SmallVec::from_vec(list)),
    );
    Image::from_layer(layer)
        .write()
        .to_file(path)
        .map_err(|e| image_err(path, e))
}

fn read_channels(path: &Path) -> Result<(ImageDims, Vec<(String, Vec<f32>)>)> {
    let image = read()
        .no_deep_data()
        .largest_resolution_level()
        .all_channels()
        .first_valid_layer()
        .all_attributes()
        .from_file(path)
        .map_err(|e| image_err(path, e))?;
    let size = image.layer_data.size;
    let dims = ImageDims::new(size.width(), size.height())?;
    let channels = image
        .layer_data
        .channel_data
        .list
        .iter()
        .map(|c| {
            (
                c.name.to_string(),
                c.sample_data.values_as_f32().collect::<Vec<f32>>(),
            )
        })
        .collect();
    Ok((dims, channels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ImageDims {
        ImageDims::new(16, 8).unwrap()
    }

    #[test]
    fn bilinear_equals_nearest_inside_constant_regions() {
        let mut p = Panorama::new(dims());
        for row in 0..8 {
            for col in 0..16 {
                let i = p.index(col, row);
                p.depth[i] = if col < 8 { 2.0 } else { 5.0 };
            }
        }
        // interior of each constant block
        for &(u, v) in &[(2.3, 3.1), (4.0, 6.5), (11.2, 2.2), (13.9, 5.0)] {
            let px = PixelCoord { u, v };
            assert_eq!(p.sample_depth(px).unwrap(), p.nearest_depth(px));
        }
        // straddling the boundary at u = 8 blends
        let mid = p.sample_depth(PixelCoord { u: 8.0, v: 4.0 }).unwrap();
        assert!((mid - 3.5).abs() < 1e-12);
    }

    #[test]
    fn sampling_wraps_horizontally() {
        let mut p = Panorama::new(dims());
        for row in 0..8 {
            let i0 = p.index(0, row);
            let i1 = p.index(15, row);
            p.rgb[i0] = [1.0, 0.0, 0.0];
            p.rgb[i1] = [0.0, 0.0, 1.0];
        }
        // u = 0 is halfway between the centers of columns 15 and 0
        let c = p.sample_rgb(PixelCoord { u: 0.0, v: 4.0 });
        assert!((c.x - 0.5).abs() < 1e-12 && (c.z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_depth_taps_are_skipped() {
        let mut p = Panorama::new(dims());
        let i = p.index(3, 3);
        p.depth[i] = 4.0;
        assert_eq!(p.sample_depth(PixelCoord { u: 3.9, v: 3.9 }), Some(4.0));
        assert_eq!(p.sample_depth(PixelCoord { u: 10.0, v: 6.0 }), None);
    }

    #[test]
    fn shift_moves_columns() {
        let mut p = Panorama::new(dims());
        let i = p.index(15, 2);
        p.rgb[i] = [1.0; 3];
        let s = p.circular_shift(3);
        assert_eq!(s.rgb[s.index(2, 2)], [1.0; 3]);
    }

    #[test]
    fn exr_and_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Panorama::new(dims());
        for i in 0..p.rgb.len() {
            p.rgb[i] = [i as f32 / 128.0, 0.25, 1.0 - i as f32 / 128.0];
            p.depth[i] = 0.5 + i as f32 * 0.01;
        }
        let rgb_path = dir.path().join("c.exr");
        let depth_path = dir.path().join("d.exr");
        p.save_rgb_exr(&rgb_path).unwrap();
        p.save_depth_exr(&depth_path).unwrap();
        assert_eq!(Panorama::load_rgb_exr(&rgb_path).unwrap().rgb, p.rgb);
        assert_eq!(Panorama::load_depth_exr(&depth_path).unwrap().depth, p.depth);

        let png = dir.path().join("c.png");
        p.save_png(&png).unwrap();
        let back = Panorama::load_png(&png).unwrap();
        for (a, b) in back.rgb.iter().zip(&p.rgb) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
}
