//! Cartesian, spherical and cylindrical grids compared on projection
//! collisions, panoramic coverage and alignment with room surfaces.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cart_to_cyl, cart_to_sph, cyl_jacobian, cyl_to_cart, equirect_project, sph_jacobian, sph_to_cart, CartPoint, CylCoord,
    CylOffset, ImageDims, SphCoord,
};
use crate::panorama::Panorama;
use crate::triplane::GridRes;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Axes `(x, y, z)`.
    Cartesian,
    /// Axes `(ρ, polar, azimuth)`.
    Spherical,
    /// Axes `(r, θ, z)`.
    Cylindrical,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [SystemKind::Cartesian, SystemKind::Spherical, SystemKind::Cylindrical];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Cartesian => "cartesian",
            SystemKind::Spherical => "spherical",
            SystemKind::Cylindrical => "cylindrical",
        }
    }
}

/// A gridded coordinate system around the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordSys {
    pub kind: SystemKind,
    /// Cells per axis, in the system's axis order.
    pub res: [usize; 3],
    /// Horizontal bound: `|x|, |z| ≤ radius`, `r ≤ radius` or `ρ ≤ radius`.
    pub radius: f64,
    /// Vertical half-span for the Cartesian and cylindrical systems.
    pub half_height: f64,
}

impl CoordSys {
    pub fn new(kind: SystemKind, res: [usize; 3], radius: f64, half_height: f64) -> Result<Self> {
        let s = Self {
            kind,
            res,
            radius,
            half_height,
        };
        s.validate()?;
        Ok(s)
    }

    /// The three systems at the plane-cell budget of a cylindrical grid.
    /// Spherical reuses `(n_r, n_z, n_θ)` as `(ρ, polar, azimuth)`; the
    /// Cartesian grid is `(n, m, n)` with `2nm + n² = budget` and `m ≤ n`
    /// as close to `n` as the budget allows.
    pub fn equal_budget(kind: SystemKind, g: GridRes, radius: f64, half_height: f64) -> Result<Self> {
        let res = match kind {
            SystemKind::Cylindrical => [g.n_r, g.n_theta, g.n_z],
            SystemKind::Spherical => [g.n_r, g.n_z, g.n_theta],
            SystemKind::Cartesian => {
                let budget = crate::triplane::storage_cells(&g);
                let (n, m) = cartesian_split(budget)
                    .ok_or_else(|| Error::Config(format!("no Cartesian grid with {budget} plane cells")))?;
                [n, m, n]
            }
        };
        Self::new(kind, res, radius, half_height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.res.iter().any(|n| *n < 2) {
            return Err(Error::Config(format!("resolutions must be >= 2, got {:?}", self.res)));
        }
        if !(self.radius > 0.0 && self.half_height > 0.0) {
            return Err(Error::Config("bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn plane_cells(&self) -> usize {
        let [a, b, c] = self.res;
        a * b + b * c + c * a
    }

    fn spans(&self) -> [(f64, f64); 3] {
        let (r, h) = (self.radius, self.half_height);
        match self.kind {
            SystemKind::Cartesian => [(-r, r), (-h, h), (-r, r)],
            SystemKind::Spherical => [(0.0, r), (0.0, PI), (0.0, TAU)],
            SystemKind::Cylindrical => [(0.0, r), (0.0, TAU), (-h, h)],
        }
    }

    /// Coordinates of `p` in axis order.
    pub fn coords(&self, p: &CartPoint) -> [f64; 3] {
        match self.kind {
            SystemKind::Cartesian => [p.x, p.y, p.z],
            SystemKind::Spherical => {
                let s = cart_to_sph(p);
                [s.rho, s.polar, s.azimuth]
            }
            SystemKind::Cylindrical => {
                let c = cart_to_cyl(p);
                [c.r, c.theta, c.z]
            }
        }
    }

    /// Cell of `p` per axis, `None` outside the bounds.
    pub fn cell(&self, p: &CartPoint) -> Option<[usize; 3]> {
        let x = self.coords(p);
        let spans = self.spans();
        let mut out = [0; 3];
        for a in 0..3 {
            let (lo, hi) = spans[a];
            let t = (x[a] - lo) / (hi - lo);
            if !(0.0..=1.0).contains(&t) {
                return None;
            }
            out[a] = ((t * self.res[a] as f64) as usize).min(self.res[a] - 1);
        }
        Some(out)
    }

    /// Center coordinate of cell `i` on `axis`.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = self.spans()[axis];
        lo + (i as f64 + 0.5) * (hi - lo) / self.res[axis] as f64
    }

    pub fn to_cart(&self, x: [f64; 3]) -> CartPoint {
        match self.kind {
            SystemKind::Cartesian => Vector3::new(x[0], x[1], x[2]),
            SystemKind::Spherical => sph_to_cart(&SphCoord {
                rho: x[0],
                polar: x[1],
                azimuth: x[2],
            }),
            SystemKind::Cylindrical => {
                cyl_to_cart(&CylCoord::new(x[0], x[1], x[2]), &CylOffset::ZERO).expect("radius within bounds")
            }
        }
    }

    /// Unit tangent of each coordinate line through `p`. These are also the
    /// isosurface normals since all three systems are orthogonal.
    pub fn axis_directions(&self, p: &CartPoint) -> [Vector3<f64>; 3] {
        let j = match self.kind {
            SystemKind::Cartesian => return [Vector3::x(), Vector3::y(), Vector3::z()],
            SystemKind::Spherical => sph_jacobian(&cart_to_sph(p)),
            SystemKind::Cylindrical => cyl_jacobian(&cart_to_cyl(p), &CylOffset::ZERO).expect("non-negative radius"),
        };
        [0, 1, 2].map(|k| {
            let v = j.column(k).into_owned();
            let n = v.norm();
            if n > 0.0 {
                v / n
            } else {
                Vector3::zeros()
            }
        })
    }
}

fn cartesian_split(budget: usize) -> Option<(usize, usize)> {
    // n² + 2nm = budget with 2 ≤ m ≤ n, as close to cubic as possible
    (2..budget)
        .take_while(|n| n * n < budget)
        .filter_map(|n| {
            let rest = budget - n * n;
            let m = rest / (2 * n);
            (rest % (2 * n) == 0 && (2..=n).contains(&m)).then_some((n, m))
        })
        .min_by_key(|(n, m)| n - m)
}

/// Point counts of one plane of a system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneHistogram {
    /// Axis indices spanning the plane.
    pub axes: [usize; 2],
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramStats {
    pub points: usize,
    pub max: u32,
    /// Mean count over occupied cells.
    pub mean: f64,
    /// Occupied cells holding two or more points, over occupied cells.
    pub multi_fraction: f64,
    /// Points that land in an already occupied cell, over points.
    pub collision_fraction: f64,
    pub gini: f64,
}

impl PlaneHistogram {
    pub fn stats(&self) -> HistogramStats {
        let points: usize = self.counts.iter().map(|c| *c as usize).sum();
        let occupied = self.counts.iter().filter(|c| **c > 0).count();
        let multi = self.counts.iter().filter(|c| **c >= 2).count();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        HistogramStats {
            points,
            max: self.counts.iter().copied().max().unwrap_or(0),
            mean: ratio(points, occupied),
            multi_fraction: ratio(multi, occupied),
            collision_fraction: ratio(points - occupied, points),
            gini: gini(&self.counts),
        }
    }
}

/// Gini coefficient of the counts (0 for perfectly even, towards 1 for
/// all mass in one cell).
pub fn gini(counts: &[u32]) -> f64 {
    let mut v: Vec<u64> = counts.iter().map(|c| *c as u64).collect();
    v.sort_unstable();
    let n = v.len() as f64;
    let total: u64 = v.iter().sum();
    if total == 0 || v.is_empty() {
        return 0.0;
    }
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * *x as f64).sum();
    (2.0 * weighted) / (n * total as f64) - (n + 1.0) / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionHistogram {
    pub system: CoordSys,
    pub planes: Vec<PlaneHistogram>,
    pub in_bounds: usize,
}

impl CollisionHistogram {
    pub fn plane_stats(&self) -> Vec<HistogramStats> {
        self.planes.iter().map(|p| p.stats()).collect()
    }

    /// Collision fraction averaged over the three planes.
    pub fn collision_fraction(&self) -> f64 {
        self.plane_stats().iter().map(|s| s.collision_fraction).sum::<f64>() / self.planes.len() as f64
    }
}

const PLANE_AXES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

/// Scatters every in-bounds point into the three planes of `sys`.
pub fn init_collision_stats(sys: &CoordSys, points: &[CartPoint]) -> CollisionHistogram {
    let res = sys.res;
    let sizes = PLANE_AXES.map(|[a, b]| res[a] * res[b]);
    let empty = || (sizes.map(|n| vec![0u32; n]), 0usize);
    let (counts, in_bounds) = points
        .par_chunks(4096)
        .fold(empty, |(mut acc, mut n), chunk| {
            for p in chunk {
                if let Some(c) = sys.cell(p) {
                    n += 1;
                    for (k, [a, b]) in PLANE_AXES.iter().enumerate() {
                        acc[k][c[*a] * res[*b] + c[*b]] += 1;
                    }
                }
            }
            (acc, n)
        })
        .reduce(empty, |(mut a, na), (b, nb)| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.iter_mut().zip(y).for_each(|(u, v)| *u += v);
            }
            (a, na + nb)
        });
    let planes = PLANE_AXES
        .iter()
        .zip(counts)
        .map(|(&[a, b], counts)| PlaneHistogram {
            axes: [a, b],
            rows: res[a],
            cols: res[b],
            counts,
        })
        .collect();
    CollisionHistogram {
        system: *sys,
        planes,
        in_bounds,
    }
}

/// Hit counts of one shell's sample points projected into a panorama
/// from the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageMap {
    pub dims: ImageDims,
    pub hits: Vec<u32>,
}

impl CoverageMap {
    /// Fraction of pixels hit at least once.
    pub fn coverage(&self) -> f64 {
        self.hits.iter().filter(|h| **h > 0).count() as f64 / self.hits.len() as f64
    }

    /// Coverage restricted to the rows `[r0, r1)`.
    pub fn band_coverage(&self, r0: usize, r1: usize) -> f64 {
        let w = self.dims.width();
        let band = &self.hits[r0 * w..r1 * w];
        band.iter().filter(|h| **h > 0).count() as f64 / band.len() as f64
    }

    /// Grayscale image, hits scaled by the maximum.
    pub fn to_panorama(&self) -> Panorama {
        let mut p = Panorama::new(self.dims);
        let max = self.hits.iter().copied().max().unwrap_or(0).max(1) as f32;
        for (px, h) in p.rgb.iter_mut().zip(&self.hits) {
            *px = [*h as f32 / max; 3];
        }
        p.alpha.iter_mut().for_each(|a| *a = 1.0);
        p
    }
}

/// The axis whose index selects a shell: `ρ` and `r` for the curvilinear
/// systems, depth `z` for the Cartesian one.
pub fn shell_axis(kind: SystemKind) -> usize {
    match kind {
        SystemKind::Cartesian => 2,
        SystemKind::Spherical | SystemKind::Cylindrical => 0,
    }
}

/// Projects the cell centers of shell `shell` (fixed index on
/// [`shell_axis`], all cells of the other two axes) into a panorama.
pub fn sampling_projection_map(sys: &CoordSys, shell: usize, dims: ImageDims) -> Result<CoverageMap> {
    let sa = shell_axis(sys.kind);
    if shell >= sys.res[sa] {
        return Err(Error::OutOfBounds(format!("shell {shell} of {}", sys.res[sa])));
    }
    let others: Vec<usize> = (0..3).filter(|a| *a != sa).collect();
    let mut hits = vec![0u32; dims.pixel_count()];
    let w = dims.width();
    for i in 0..sys.res[others[0]] {
        for j in 0..sys.res[others[1]] {
            let mut x = [0.0; 3];
            x[sa] = sys.center(sa, shell);
            x[others[0]] = sys.center(others[0], i);
            x[others[1]] = sys.center(others[1], j);
            let Ok(px) = equirect_project(&sys.to_cart(x), dims) else {
                continue;
            };
            let col = (px.u.floor() as usize).min(w - 1);
            let row = (px.v.floor() as usize).min(dims.height() - 1);
            hits[row * w + col] += 1;
        }
    }
    Ok(CoverageMap { dims, hits })
}

/// Largest normal deviation, as `tan`, that still counts as lying on an
/// isosurface: half a cell of drift per cell travelled.
pub const ALIGN_TAN: f64 = 0.5;

/// Fraction of oriented surface points whose normal lies within
/// `atan(ALIGN_TAN)` of some coordinate isosurface normal of `sys`.
pub fn manhattan_alignment(sys: &CoordSys, points: &[(CartPoint, Vector3<f64>)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let cos_tol = 1.0 / (1.0 + ALIGN_TAN * ALIGN_TAN).sqrt();
    let aligned = points
        .par_iter()
        .filter(|(p, n)| {
            let n = n.normalize();
            sys.axis_directions(p).iter().any(|d| d.dot(&n).abs() >= cos_tol)
        })
        .count();
    aligned as f64 / points.len() as f64
}

/// Parameters of a full benchmark sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchSpec {
    pub radius: f64,
    pub half_height: f64,
    /// Every system gets this grid's plane-cell count.
    pub grid: GridRes,
    pub coverage_dims: ImageDims,
    pub cartesian_shell_step: usize,
}

/// First Cartesian depth shell of the far-plane sweep: five eighths of the
/// way through the volume, clear of the planes passing near the camera.
pub fn far_shell_start(n: usize) -> usize {
    n * 5 / 8
}

/// Shells swept for a system's coverage curve.
pub fn bench_shells(sys: &CoordSys, step: usize) -> Vec<usize> {
    let n = sys.res[shell_axis(sys.kind)];
    match sys.kind {
        SystemKind::Cartesian => (far_shell_start(n)..n).step_by(step.max(1)).collect(),
        _ => (0..n).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: SystemKind,
    pub res: [usize; 3],
    pub plane_cells: usize,
    pub in_bounds: usize,
    pub collision_fraction: f64,
    pub planes: Vec<HistogramStats>,
    /// `(shell, coverage)` pairs.
    pub coverage: Vec<(usize, f64)>,
    pub alignment: f64,
}

/// Runs every measurement for every system. `oriented` carries the points
/// with their surface normals used for the alignment score.
pub fn run_benchmark(
    spec: &BenchSpec,
    points: &[CartPoint],
    oriented: &[(CartPoint, Vector3<f64>)],
) -> Result<Vec<(SystemReport, Vec<CoverageMap>)>> {
    SystemKind::ALL
        .iter()
        .map(|kind| {
            let sys = CoordSys::equal_budget(*kind, spec.grid, spec.radius, spec.half_height)?;
            let hist = init_collision_stats(&sys, points);
            let shells = bench_shells(&sys, spec.cartesian_shell_step);
            let maps = shells
                .iter()
                .map(|k| sampling_projection_map(&sys, *k, spec.coverage_dims))
                .collect::<Result<Vec<_>>>()?;
            let report = SystemReport {
                system: *kind,
                res: sys.res,
                plane_cells: sys.plane_cells(),
                in_bounds: hist.in_bounds,
                collision_fraction: hist.collision_fraction(),
                planes: hist.plane_stats(),
                coverage: shells.iter().copied().zip(maps.iter().map(|m| m.coverage())).collect(),
                alignment: manhattan_alignment(&sys, oriented),
            };
            Ok((report, maps))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cyl() -> CoordSys {
        CoordSys::new(SystemKind::Cylindrical, [4, 8, 6], 4.0, 2.0).unwrap()
    }

    #[test]
    fn equal_budget_matches_storage() {
        let g = GridRes::new(16, 64, 128);
        for k in SystemKind::ALL {
            let s = CoordSys::equal_budget(k, g, 4.0, 2.0).unwrap();
            assert_eq!(s.plane_cells(), 11264, "{k:?}");
        }
        assert_eq!(CoordSys::equal_budget(SystemKind::Cartesian, g, 4.0, 2.0).unwrap().res, [64, 56, 64]);
    }

    #[test]
    fn single_point_one_cell_per_plane() {
        let h = init_collision_stats(&cyl(), &[Vector3::new(1.0, 0.3, -0.5)]);
        for p in &h.planes {
            assert_eq!(p.counts.iter().filter(|c| **c > 0).count(), 1);
        }
        assert_eq!(h.collision_fraction(), 0.0);
    }

    #[test]
    fn histogram_matches_direct_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = cyl();
        let pts: Vec<CartPoint> = (0..20_000)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(-1.0..1.0));
                let c = (1.0 - b * b).sqrt();
                Vector3::new(3.0 * c * a.sin(), 3.0 * b, 3.0 * c * a.cos())
            })
            .collect();
        let h = init_collision_stats(&sys, &pts);
        // brute force over the (θ, z) plane
        let mut direct = vec![0u32; 8 * 6];
        let mut inside = 0;
        for p in &pts {
            let c = cart_to_cyl(p);
            if c.r <= 4.0 && c.z.abs() <= 2.0 {
                inside += 1;
                let i = ((c.theta / TAU * 8.0) as usize).min(7);
                let j = (((c.z + 2.0) / 4.0 * 6.0) as usize).min(5);
                direct[i * 6 + j] += 1;
            }
        }
        assert_eq!(h.planes[1].counts, direct);
        assert_eq!(h.in_bounds, inside);
        for p in &h.planes {
            assert_eq!(p.counts.iter().sum::<u32>() as usize, inside);
        }
    }

    #[test]
    fn gini_extremes() {
        assert_eq!(gini(&[3, 3, 3, 3]), 0.0);
        assert!((gini(&[0, 0, 0, 8]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn spherical_shells_cover_identically() {
        let s = CoordSys::new(SystemKind::Spherical, [6, 12, 24], 4.0, 2.0).unwrap();
        let dims = ImageDims::new(64, 32).unwrap();
        let c0 = sampling_projection_map(&s, 0, dims).unwrap();
        for shell in 1..6 {
            let c = sampling_projection_map(&s, shell, dims).unwrap();
            // same directions; only samples on pixel boundaries may flip
            assert!((c.coverage() - c0.coverage()).abs() <= 0.01 * c0.coverage());
            assert_eq!(c.hits.iter().sum::<u32>(), 12 * 24);
        }
        assert!(sampling_projection_map(&s, 6, dims).is_err());
    }

    #[test]
    fn cylindrical_poles_thin_out_with_radius() {
        let s = CoordSys::new(SystemKind::Cylindrical, [8, 64, 32], 8.0, 2.0).unwrap();
        let dims = ImageDims::new(64, 32).unwrap();
        let near = sampling_projection_map(&s, 0, dims).unwrap();
        let far = sampling_projection_map(&s, 7, dims).unwrap();
        assert!(far.band_coverage(0, 4) < near.band_coverage(0, 4));
        assert_eq!(far.band_coverage(15, 17), 1.0);
    }

    #[test]
    fn circular_wall_is_aligned() {
        let pts: Vec<_> = (0..100)
            .map(|i| {
                let t = i as f64 * TAU / 100.0;
                let p = Vector3::new(2.0 * t.sin(), (i % 7) as f64 * 0.1, 2.0 * t.cos());
                (p, Vector3::new(t.sin(), 0.0, t.cos()))
            })
            .collect();
        assert_eq!(manhattan_alignment(&cyl(), &pts), 1.0);
        let floor: Vec<_> = pts.iter().map(|(p, _)| (*p, Vector3::y())).collect();
        assert_eq!(manhattan_alignment(&cyl(), &floor), 1.0);
    }
}
