//! Panoramic image and depth quality metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageDims;
use crate::panorama::Panorama;

/// Score reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Normalized cos-latitude weight of every row.
pub fn latitude_weights(dims: ImageDims) -> Vec<f64> {
    (0..dims.height()).map(|r| dims.row_latitude(r).cos()).collect()
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

/// Weighted squared RGB error summed over a row, with its weight total.
fn weighted_mse(a: &Panorama, b: &Panorama, mask: Option<&[bool]>, row_w: &[f64]) -> Result<f64> {
    a.check_same_dims(b)?;
    if let Some(m) = mask {
        if m.len() != a.rgb.len() {
            return Err(Error::DimMismatch(format!("mask of {} for {} pixels", m.len(), a.rgb.len())));
        }
    }
    let w = a.width();
    let (num, den) = (0..a.height())
        .into_par_iter()
        .map(|row| {
            let mut se = 0.0f64;
            let mut n = 0usize;
            for col in 0..w {
                let i = row * w + col;
                if mask.is_some_and(|m| !m[i]) {
                    continue;
                }
                for k in 0..3 {
                    let d = a.rgb[i][k] as f64 - b.rgb[i][k] as f64;
                    se += d * d;
                }
                n += 3;
            }
            (se * row_w[row], n as f64 * row_w[row])
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |(p, q), (x, y)| (p + x, q + y));
    if den <= 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(num / den)
}

/// Latitude-weighted PSNR over RGB, peak value 1.
pub fn ws_psnr(a: &Panorama, b: &Panorama) -> Result<f64> {
    let w = latitude_weights(a.dims());
    Ok(psnr_from_mse(weighted_mse(a, b, None, &w)?))
}

/// [`ws_psnr`] restricted to pixels where `mask` is true.
pub fn ws_psnr_masked(a: &Panorama, b: &Panorama, mask: &[bool]) -> Result<f64> {
    let w = latitude_weights(a.dims());
    Ok(psnr_from_mse(weighted_mse(a, b, Some(mask), &w)?))
}

/// Unweighted PSNR, optionally masked.
pub fn psnr(a: &Panorama, b: &Panorama, mask: Option<&[bool]>) -> Result<f64> {
    let w = vec![1.0; a.height()];
    Ok(psnr_from_mse(weighted_mse(a, b, mask, &w)?))
}

/// True outside the top and bottom `fraction` of rows.
pub fn polar_band_mask(dims: ImageDims, fraction: f64) -> Vec<bool> {
    let band = (dims.height() as f64 * fraction).round() as usize;
    (0..dims.pixel_count())
        .map(|i| {
            let row = i / dims.width();
            row >= band && row + band < dims.height()
        })
        .collect()
}

/// Pearson correlation of two depth maps over pixels where both are
/// non-empty and `mask` (if any) is set.
pub fn pcc(a: &Panorama, b: &Panorama, mask: Option<&[bool]>) -> Result<f64> {
    a.check_same_dims(b)?;
    let pairs = a
        .depth
        .iter()
        .zip(&b.depth)
        .enumerate()
        .filter(|(i, (x, y))| **x > 0.0 && **y > 0.0 && mask.is_none_or(|m| m[*i]))
        .map(|(_, (x, y))| (*x as f64, *y as f64));
    pearson(pairs)
}

/// Streaming Pearson correlation (running means and co-moments).
pub fn pearson(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<f64> {
    let (mut n, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs {
        n += 1.0;
        let dx = x - mx;
        mx += dx / n;
        let dy = y - my;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if n < 2.0 {
        return Err(Error::EmptyMask);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::DegenerateDepth);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean absolute difference between the first and last columns.
pub fn lrce(img: &Panorama) -> f64 {
    let (w, h) = (img.width(), img.height());
    let mut acc = 0.0f64;
    for row in 0..h {
        let l = img.rgb[row * w];
        let r = img.rgb[row * w + w - 1];
        for k in 0..3 {
            acc += (l[k] as f64 - r[k] as f64).abs();
        }
    }
    acc / (3 * h) as f64
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WIN] {
    let mut w = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of a `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WIN]) -> Vec<f64> {
    let ow = w - SSIM_WIN + 1;
    let oh = h - SSIM_WIN + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WIN).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WIN).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over RGB channels with an 11x11 Gaussian window, valid
/// windows only.
pub fn ssim(a: &Panorama, b: &Panorama) -> Result<f64> {
    a.check_same_dims(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(Error::DimMismatch(format!("ssim needs at least {SSIM_WIN}x{SSIM_WIN}")));
    }
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let per_channel: Vec<f64> = (0..3)
        .into_par_iter()
        .map(|ch| {
            let x: Vec<f64> = a.rgb.iter().map(|p| p[ch] as f64).collect();
            let y: Vec<f64> = b.rgb.iter().map(|p| p[ch] as f64).collect();
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
            let mx = filter_valid(&x, w, h, &k);
            let my = filter_valid(&y, w, h, &k);
            let sxx = filter_valid(&xx, w, h, &k);
            let syy = filter_valid(&yy, w, h, &k);
            let sxy = filter_valid(&xy, w, h, &k);
            let mut acc = 0.0;
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = sxx[i] - ux * ux;
                let vy = syy[i] - uy * uy;
                let cxy = sxy[i] - ux * uy;
                acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            }
            acc / mx.len() as f64
        })
        .collect();
    Ok((per_channel.iter().sum::<f64>() / 3.0).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub absrel: f64,
    pub rmse: f64,
    pub delta1: f64,
}

/// AbsRel, RMSE (m) and δ1 over pixels with valid ground truth and
/// prediction, further restricted by `mask`.
pub fn depth_metrics(d: &Panorama, gt: &Panorama, mask: Option<&[bool]>) -> Result<DepthMetrics> {
    d.check_same_dims(gt)?;
    let (mut n, mut absrel, mut se, mut good) = (0usize, 0.0f64, 0.0f64, 0usize);
    for (i, (p, g)) in d.depth.iter().zip(&gt.depth).enumerate() {
        if !(*p > 0.0 && *g > 0.0) || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (p, g) = (*p as f64, *g as f64);
        n += 1;
        absrel += (p - g).abs() / g;
        se += (p - g) * (p - g);
        if (p / g).max(g / p) < 1.25 {
            good += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(DepthMetrics {
        absrel: absrel / n as f64,
        rmse: (se / n as f64).sqrt(),
        delta1: good as f64 / n as f64,
    })
}

/// How PCC is aggregated over several images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PccMode {
    #[default]
    PerImage,
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub ws_psnr: f64,
    pub ssim: Option<f64>,
    pub lrce: f64,
    pub pcc: Option<f64>,
    pub absrel: Option<f64>,
    pub rmse: Option<f64>,
    pub delta1: Option<f64>,
    pub lpips: String,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "name,ws_psnr,ssim,lrce,pcc,absrel,rmse,delta1,lpips";

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.name,
            self.ws_psnr,
            o(self.ssim),
            self.lrce,
            o(self.pcc),
            o(self.absrel),
            o(self.rmse),
            o(self.delta1),
            self.lpips
        )
    }
}

/// Scores `render` against `gt`. Depth metrics are filled in when both
/// carry depth.
pub fn evaluate(name: &str, render: &Panorama, gt: &Panorama) -> Result<MetricReport> {
    render.check_same_dims(gt)?;
    let depth = depth_metrics(render, gt, None).ok();
    Ok(MetricReport {
        name: name.to_string(),
        ws_psnr: ws_psnr(render, gt)?,
        ssim: ssim(render, gt).ok(),
        lrce: lrce(render),
        pcc: pcc(render, gt, None).ok(),
        absrel: depth.map(|d| d.absrel),
        rmse: depth.map(|d| d.rmse),
        delta1: depth.map(|d| d.delta1),
        lpips: "unavailable".into(),
    })
}

/// Mean of each metric over `reports`, named `"mean"`. Pooled PCC needs the
/// images themselves and is computed by the caller; here PCC is averaged.
pub fn aggregate(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean_opt = |f: fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some(MetricReport {
        name: "mean".into(),
        ws_psnr: reports.iter().map(|r| r.ws_psnr).sum::<f64>() / n,
        ssim: mean_opt(|r| r.ssim),
        lrce: reports.iter().map(|r| r.lrce).sum::<f64>() / n,
        pcc: mean_opt(|r| r.pcc),
        absrel: mean_opt(|r| r.absrel),
        rmse: mean_opt(|r| r.rmse),
        delta1: mean_opt(|r| r.delta1),
        lpips: "unavailable".into(),
    })
}

/// PCC over the pooled valid pixels of several pairs.
pub fn pooled_pcc(pairs: &[(&Panorama, &Panorama)]) -> Result<f64> {
    for (a, b) in pairs {
        a.check_same_dims(b)?;
    }
    pearson(pairs.iter().flat_map(|(a, b)| {
        a.depth
            .iter()
            .zip(&b.depth)
            .filter(|(x, y)| **x > 0.0 && **y > 0.0)
            .map(|(x, y)| (*x as f64, *y as f64))
    }))
}
