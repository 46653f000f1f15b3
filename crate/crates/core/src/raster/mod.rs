//! Deterministic tile-based CPU splatting.
//!
//! Both the direct equirectangular path and the cubemap faces go through the
//! same compositor: Gaussians are projected to 2D splats, sorted by
//! Euclidean camera distance (ties by cloud index), binned into 16x16 tiles
//! and alpha-blended front to back per pixel. Every pixel belongs to exactly
//! one tile and its blend order is fixed before any parallel work starts, so
//! output does not depend on the number of worker threads.

mod cubemap;
mod equirect;
mod loss;

pub use cubemap::{render_cubemap, CubeFace};
pub use equirect::render_equirect;
pub use loss::{composite_loss, PerceptualLoss, ZeroPerceptual, DEPTH_WEIGHT, PERCEPTUAL_WEIGHT};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Splats below this alpha are skipped; blending stops once transmittance
/// falls under it.
pub const ALPHA_EPS: f64 = 1.0 / 255.0;
const MAX_ALPHA: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    pub background: [f32; 3],
    pub tile_size: usize,
    /// Latitude (degrees) beyond which the projection Jacobian is evaluated
    /// at the clamped latitude.
    pub pole_clamp_deg: f64,
    /// Cap on the footprint half-extent, pixels.
    pub max_extent_px: f64,
    /// Added to the diagonal of every 2D covariance, px².
    pub dilation: f64,
    /// Footprint cutoff in standard deviations.
    pub cutoff_sigma: f64,
    /// Gaussians closer than this to the camera (m) are culled.
    pub near: f64,
    /// Worker threads; `0` uses the ambient rayon pool.
    pub threads: usize,
    /// Cubemap face edge in pixels; `0` picks `ceil(W / π)`, which matches the
    /// equatorial sampling density of the panorama at each face center.
    pub cube_face_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            tile_size: 16,
            pole_clamp_deg: 89.5,
            max_extent_px: 512.0,
            dilation: 0.3,
            cutoff_sigma: 3.0,
            near: 0.01,
            threads: 0,
            cube_face_size: 0,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::Config("tile_size must be positive".into()));
        }
        if !(self.pole_clamp_deg > 0.0 && self.pole_clamp_deg < 90.0) {
            return Err(Error::Config("pole_clamp_deg must lie in (0, 90)".into()));
        }
        if !(self.max_extent_px > 0.0 && self.cutoff_sigma > 0.0 && self.dilation >= 0.0) {
            return Err(Error::Config("footprint parameters must be positive".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::Config("near must be positive".into()));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::Config("background must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Runs `f` on a dedicated pool when a thread count is requested.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// A projected Gaussian footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub u: f64,
    pub v: f64,
    /// Inverse 2D covariance `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Euclidean distance to the camera, meters.
    pub distance: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Footprint half-extents along `u` and `v`, pixels.
    pub extent: [f64; 2],
    /// Position in the source cloud, used to break distance ties.
    pub index: usize,
}

/// Builds a splat from a 2D covariance; `None` if it is not positive definite.
pub(crate) fn splat_from_cov(
    u: f64,
    v: f64,
    cov: [f64; 3],
    distance: f64,
    opacity: f64,
    color: [f64; 3],
    index: usize,
    opts: &RenderOptions,
) -> Option<Splat2D> {
    let a = cov[0] + opts.dilation;
    let b = cov[1];
    let c = cov[2] + opts.dilation;
    let det = a * c - b * b;
    if !(det > 0.0 && a > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let extent = [
        (opts.cutoff_sigma * a.sqrt()).min(opts.max_extent_px),
        (opts.cutoff_sigma * c.sqrt()).min(opts.max_extent_px),
    ];
    Some(Splat2D {
        u,
        v,
        conic,
        distance,
        opacity,
        color,
        extent,
        index,
    })
}

/// Per-pixel result of compositing.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Shaded {
    pub rgb: [f32; 3],
    pub depth: f32,
    pub alpha: f32,
}

pub(crate) struct Canvas {
    pub width: usize,
    pub height: usize,
    /// Horizontal wrap: the last tile column neighbors the first.
    pub wrap: bool,
}

/// Blends `splats` onto a `width x height` canvas and returns one shaded
/// value per pixel in row-major order.
pub(crate) fn composite(
    canvas: &Canvas,
    mut splats: Vec<Splat2D>,
    opts: &RenderOptions,
) -> Vec<Shaded> {
    let ts = opts.tile_size;
    let (w, h) = (canvas.width, canvas.height);
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);

    splats.sort_by(|p, q| {
        p.distance
            .total_cmp(&q.distance)
            .then(p.index.cmp(&q.index))
    });

    let cutoff2 = opts.cutoff_sigma * opts.cutoff_sigma;
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let mut col_tiles = Vec::new();
    for (si, s) in splats.iter().enumerate() {
        let v_lo = (s.v - s.extent[1]).floor().max(0.0);
        let v_hi = (s.v + s.extent[1]).floor().min(h as f64 - 1.0);
        if v_hi < v_lo {
            continue;
        }
        let u_lo = (s.u - s.extent[0]).floor();
        let u_hi = (s.u + s.extent[0]).floor();
        col_tiles.clear();
        if canvas.wrap {
            if u_hi - u_lo + 1.0 >= w as f64 {
                col_tiles.extend(0..tiles_x);
            } else {
                let spans = wrap_spans(u_lo as i64, u_hi as i64, w as i64);
                for (a, b) in spans.into_iter().flatten() {
                    for t in (a as usize / ts)..=(b as usize / ts) {
                        if !col_tiles.contains(&t) {
                            col_tiles.push(t);
                        }
                    }
                }
            }
        } else {
            let lo = u_lo.max(0.0);
            let hi = u_hi.min(w as f64 - 1.0);
            if hi < lo {
                continue;
            }
            col_tiles.extend((lo as usize / ts)..=(hi as usize / ts));
        }
        for ty in (v_lo as usize / ts)..=(v_hi as usize / ts) {
            let (y0, y1) = (ty * ts, ((ty + 1) * ts).min(h));
            for &tx in &col_tiles {
                let (x0, x1) = (tx * ts, ((tx + 1) * ts).min(w));
                let u = tile_local_u(canvas, s.u, x0, x1);
                if touches_rect(s, u, [x0, x1, y0, y1], cutoff2) {
                    bins[ty * tiles_x + tx].push(si as u32);
                }
            }
        }
    }

    let tiles: Vec<Vec<Shaded>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            shade_tile(canvas, &splats, &bins[t], tx * ts, ty * ts, opts)
        })
        .collect();

    let mut out = vec![Shaded::default(); w * h];
    for (t, tile) in tiles.into_iter().enumerate() {
        let (x0, y0) = ((t % tiles_x) * ts, (t / tiles_x) * ts);
        let tw = ts.min(w - x0);
        for (k, px) in tile.into_iter().enumerate() {
            let (dx, dy) = (k % tw, k / tw);
            out[(y0 + dy) * w + x0 + dx] = px;
        }
    }
    out
}

/// Splits the integer column range `[lo, hi]` into at most two in-range spans.
fn wrap_spans(lo: i64, hi: i64, w: i64) -> [Option<(i64, i64)>; 2] {
    let a = lo.rem_euclid(w);
    let len = hi - lo;
    if a + len < w {
        [Some((a, a + len)), None]
    } else {
        [Some((a, w - 1)), Some((0, a + len - w))]
    }
}

/// Copy of `u` (shifted by a multiple of the width on wrapping canvases)
/// nearest the center of the column range `[x0, x1)`.
fn tile_local_u(canvas: &Canvas, u: f64, x0: usize, x1: usize) -> f64 {
    if !canvas.wrap {
        return u;
    }
    let w = canvas.width as f64;
    let c = 0.5 * (x0 + x1) as f64;
    u + w * ((c - u) / w).round()
}

/// Whether the cutoff ellipse of `s` (centered at `u`) reaches any pixel
/// center in the tile. Conservative: tests the continuous rectangle
/// spanned by the centers.
fn touches_rect(s: &Splat2D, u: f64, rect: [usize; 4], cutoff2: f64) -> bool {
    let (lo_u, hi_u) = (rect[0] as f64 + 0.5 - u, rect[1] as f64 - 0.5 - u);
    let (lo_v, hi_v) = (rect[2] as f64 + 0.5 - s.v, rect[3] as f64 - 0.5 - s.v);
    if lo_u > s.extent[0] || hi_u < -s.extent[0] || lo_v > s.extent[1] || hi_v < -s.extent[1] {
        return false;
    }
    if lo_u <= 0.0 && hi_u >= 0.0 && lo_v <= 0.0 && hi_v >= 0.0 {
        return true;
    }
    let [a, b, c] = s.conic;
    let q = |du: f64, dv: f64| a * du * du + 2.0 * b * du * dv + c * dv * dv;
    let mut best = f64::INFINITY;
    for dv in [lo_v, hi_v] {
        let du = (-b * dv / a).clamp(lo_u, hi_u);
        best = best.min(q(du, dv));
    }
    for du in [lo_u, hi_u] {
        let dv = (-b * du / c).clamp(lo_v, hi_v);
        best = best.min(q(du, dv));
    }
    best <= cutoff2 * (1.0 + 1e-9) + 1e-9
}

fn shade_tile(
    canvas: &Canvas,
    splats: &[Splat2D],
    bin: &[u32],
    x0: usize,
    y0: usize,
    opts: &RenderOptions,
) -> Vec<Shaded> {
    let ts = opts.tile_size;
    let x1 = (x0 + ts).min(canvas.width);
    let y1 = (y0 + ts).min(canvas.height);
    let w = canvas.width as f64;
    let cutoff2 = opts.cutoff_sigma * opts.cutoff_sigma;
    let bg = opts.background.map(|c| c as f64);
    // unwrap each splat once for the whole tile; only footprints close to
    // half the width still need the per-pixel wrap
    let wide = w * 0.5 - ts as f64;
    let local: Vec<(Splat2D, bool)> = bin
        .iter()
        .map(|&si| {
            let mut s = splats[si as usize];
            s.u = tile_local_u(canvas, s.u, x0, x1);
            (s, canvas.wrap && s.extent[0] > wide)
        })
        .collect();
    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        let pv = y as f64 + 0.5;
        for x in x0..x1 {
            let pu = x as f64 + 0.5;
            let mut transmittance = 1.0f64;
            let mut rgb = [0.0f64; 3];
            let mut depth = 0.0f64;
            let mut wsum = 0.0f64;
            let mut saturated = false;
            for (s, needs_wrap) in &local {
                let mut du = pu - s.u;
                if *needs_wrap {
                    du = (du + w * 0.5).rem_euclid(w) - w * 0.5;
                }
                let dv = pv - s.v;
                if du.abs() > s.extent[0] || dv.abs() > s.extent[1] {
                    continue;
                }
                let q = s.conic[0] * du * du + 2.0 * s.conic[1] * du * dv + s.conic[2] * dv * dv;
                if q > cutoff2 {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(MAX_ALPHA);
                if alpha < ALPHA_EPS {
                    continue;
                }
                let wgt = alpha * transmittance;
                for k in 0..3 {
                    rgb[k] += wgt * s.color[k];
                }
                depth += wgt * s.distance;
                wsum += wgt;
                transmittance *= 1.0 - alpha;
                if transmittance < ALPHA_EPS {
                    saturated = true;
                    break;
                }
            }
            let shaded = if saturated {
                // treat the pixel as opaque: renormalize, no background
                Shaded {
                    rgb: rgb.map(|c| (c / wsum).clamp(0.0, 1.0) as f32),
                    depth: (depth / wsum) as f32,
                    alpha: 1.0,
                }
            } else {
                let mut c = [0.0f32; 3];
                for k in 0..3 {
                    c[k] = (rgb[k] + transmittance * bg[k]).clamp(0.0, 1.0) as f32;
                }
                Shaded {
                    rgb: c,
                    depth: if wsum > 0.0 { (depth / wsum) as f32 } else { 0.0 },
                    alpha: (1.0 - transmittance) as f32,
                }
            };
            out.push(shaded);
        }
    }
    out
}
