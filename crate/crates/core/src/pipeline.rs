//! Synthetic scene generation and the volume-branch pipeline:
//! init → cross-plane → tri-to-image → decode → prune → retrieve → concat → render.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gaussian::{concat, Frame, GaussianCloud};
use crate::geometry::{CartPoint, Pose};
use crate::metrics::ws_psnr_masked;
use crate::panorama::Panorama;
use crate::ply::{read_ply, write_ply, PlyOptions};
use crate::prune::depth_prune;
use crate::raster::{render_equirect, with_threads};
use crate::retrieval::{colorize_cloud, SourceView};
use crate::scene::{ground_truth, load_poses, save_poses, surface_cloud, synthetic_features, FeatureEncoder, GroundTruth, Surface};
use crate::tensor_file::{read_tensors, write_tensors};
use crate::triplane::{
    cross_plane_attention, decode_gaussians, image_attention, init_from_points, load_points, save_points, FeatureMap,
    FeaturePoint, TriplaneConfig, TriplaneGrid, VolumeParams,
};

/// Seed offsets of the independent random streams of a run.
const SURFACE_STREAM: u64 = 0;
const FEATURE_STREAM: u64 = 1;
const WEIGHT_STREAM: u64 = 2;

pub struct SyntheticScene {
    pub poses: Vec<Pose>,
    pub target: Pose,
    pub views: Vec<GroundTruth>,
    pub target_gt: GroundTruth,
    /// Every surface, densely sampled.
    pub full_cloud: GaussianCloud,
    /// `full_cloud` without the masked surfaces.
    pub pixel_cloud: GaussianCloud,
    pub feature_points: Vec<FeaturePoint>,
    pub feature_maps: Vec<FeatureMap>,
    /// Target pixels that see a masked surface.
    pub mask: Vec<bool>,
}

pub fn build_scene(cfg: &RunConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    with_threads(cfg.threads, || {
        let s = &cfg.scene;
        let dims = cfg.dims()?;
        let poses = s.camera_poses();
        let target = s.target_pose();
        let seed = cfg.seed.wrapping_add(SURFACE_STREAM);
        let full_cloud = surface_cloud(&s.room, &s.sampling, &[], seed)?;
        let pixel_cloud = surface_cloud(&s.room, &s.sampling, &s.masked, seed)?;
        let encoder = FeatureEncoder::new(cfg.triplane.feature_dim, cfg.seed.wrapping_add(FEATURE_STREAM));
        let mut views = Vec::with_capacity(poses.len());
        let mut feature_points = Vec::new();
        let mut feature_maps = Vec::with_capacity(poses.len());
        for (i, pose) in poses.iter().enumerate() {
            let gt = ground_truth(&s.room, pose, dims).map_err(|e| match e {
                Error::CameraOutsideRoom { .. } => Error::CameraOutsideRoom { index: i },
                e => e,
            })?;
            let (pts, map) = synthetic_features(&gt, pose, i as u32, s.feature_stride, &encoder)?;
            feature_points.extend(pts);
            feature_maps.push(map);
            views.push(gt);
        }
        let target_gt = ground_truth(&s.room, &target, dims)?;
        let mask = target_gt.surfaces.iter().map(|x| s.masked.contains(x)).collect();
        Ok(SyntheticScene {
            poses,
            target,
            views,
            target_gt,
            full_cloud,
            pixel_cloud,
            feature_points,
            feature_maps,
            mask,
        })
    })
}

/// Everything the pipeline consumes.
#[derive(Clone, Debug)]
pub struct PipelineInputs {
    pub views: Vec<SourceView>,
    pub feature_points: Vec<FeaturePoint>,
    pub feature_maps: Vec<FeatureMap>,
    pub pixel_cloud: GaussianCloud,
    pub target: Pose,
}

impl SyntheticScene {
    pub fn inputs(&self) -> Result<PipelineInputs> {
        let views = self
            .views
            .iter()
            .zip(&self.poses)
            .enumerate()
            .map(|(i, (gt, pose))| SourceView::new(gt.panorama.clone(), gt.panorama.clone(), *pose, i as u32))
            .collect::<Result<_>>()?;
        Ok(PipelineInputs {
            views,
            feature_points: self.feature_points.clone(),
            feature_maps: self.feature_maps.clone(),
            pixel_cloud: self.pixel_cloud.clone(),
            target: self.target,
        })
    }
}

/// File names inside a scene directory.
pub mod files {
    pub const FULL_CLOUD: &str = "cloud_full.ply";
    pub const PIXEL_CLOUD: &str = "cloud_pixel.ply";
    pub const POSES: &str = "poses.json";
    pub const TARGET_POSE: &str = "target_pose.json";
    pub const TARGET_RGB: &str = "target.exr";
    pub const TARGET_PNG: &str = "target.png";
    pub const TARGET_DEPTH: &str = "target_depth.exr";
    pub const MASK: &str = "mask.png";
    pub const POINTS: &str = "points.bin";

    pub fn view_rgb(i: usize) -> String {
        format!("view_{i}.exr")
    }
    pub fn view_png(i: usize) -> String {
        format!("view_{i}.png")
    }
    pub fn view_depth(i: usize) -> String {
        format!("view_{i}_depth.exr")
    }
    pub fn features(i: usize) -> String {
        format!("features_{i}.bin")
    }
    pub fn grid(i: usize) -> String {
        format!("grid_{i}.bin")
    }
}

/// Writes every scene artifact into `dir` and returns the paths.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let mut emit = |name: &str| {
        let p = dir.join(name);
        out.push(p.clone());
        p
    };
    write_ply(&scene.full_cloud, &emit(files::FULL_CLOUD), PlyOptions::default())?;
    write_ply(&scene.pixel_cloud, &emit(files::PIXEL_CLOUD), PlyOptions::default())?;
    save_poses(&emit(files::POSES), &scene.poses)?;
    save_poses(&emit(files::TARGET_POSE), &[scene.target])?;
    for (i, gt) in scene.views.iter().enumerate() {
        gt.panorama.save_rgb_exr(&emit(&files::view_rgb(i)))?;
        gt.panorama.save_png(&emit(&files::view_png(i)))?;
        gt.panorama.save_depth_exr(&emit(&files::view_depth(i)))?;
    }
    scene.target_gt.panorama.save_rgb_exr(&emit(files::TARGET_RGB))?;
    scene.target_gt.panorama.save_png(&emit(files::TARGET_PNG))?;
    scene.target_gt.panorama.save_depth_exr(&emit(files::TARGET_DEPTH))?;
    mask_panorama(&scene.mask, scene.target_gt.panorama.clone()).save_png(&emit(files::MASK))?;
    save_points(&emit(files::POINTS), &scene.feature_points)?;
    for (i, m) in scene.feature_maps.iter().enumerate() {
        m.save(&emit(&files::features(i)))?;
    }
    Ok(out)
}

fn mask_panorama(mask: &[bool], mut pano: Panorama) -> Panorama {
    for (px, m) in pano.rgb.iter_mut().zip(mask) {
        *px = if *m { [1.0; 3] } else { [0.0; 3] };
    }
    pano
}

/// Reads a mask PNG: pixels brighter than mid-gray are in the mask.
pub fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let p = Panorama::load_png(path)?;
    Ok(p.rgb.iter().map(|c| c[0] > 0.5).collect())
}

/// Loads the pipeline inputs from a directory written by [`write_scene`].
pub fn load_inputs(dir: &Path) -> Result<PipelineInputs> {
    let poses = load_poses(&dir.join(files::POSES))?;
    let target = *load_poses(&dir.join(files::TARGET_POSE))?
        .first()
        .ok_or_else(|| Error::Config("target pose file is empty".into()))?;
    let mut views = Vec::with_capacity(poses.len());
    let mut feature_maps = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let rgb = Panorama::load_rgb(&dir.join(files::view_rgb(i)))?;
        let depth = Panorama::load_depth_exr(&dir.join(files::view_depth(i)))?;
        views.push(SourceView::new(rgb, depth, *pose, i as u32)?);
        feature_maps.push(FeatureMap::load(&dir.join(files::features(i)))?);
    }
    Ok(PipelineInputs {
        views,
        feature_points: load_points(&dir.join(files::POINTS))?,
        feature_maps,
        pixel_cloud: read_ply(&dir.join(files::PIXEL_CLOUD))?,
        target,
    })
}

pub fn seeded_params(cfg: &RunConfig) -> Result<VolumeParams> {
    VolumeParams::seeded(&cfg.triplane, cfg.param_shapes(), cfg.seed.wrapping_add(WEIGHT_STREAM))
}

/// Initial triplane of every camera.
pub fn init_grids(cfg: &RunConfig, params: &VolumeParams, inputs: &PipelineInputs) -> Result<Vec<TriplaneGrid>> {
    inputs
        .views
        .iter()
        .map(|v| {
            init_from_points(
                &inputs.feature_points,
                &cfg.triplane,
                &v.pose,
                v.index,
                cfg.volume.init_mode,
                &params.base,
            )
        })
        .collect()
}

/// Alternating cross-plane and tri-to-image attention, one pair per layer.
pub fn attend(grid: &TriplaneGrid, params: &VolumeParams, maps: &[FeatureMap], poses: &[Pose]) -> Result<TriplaneGrid> {
    let mut g = grid.clone();
    for (cross, image) in params.cross.iter().zip(&params.image) {
        g = cross_plane_attention(&g, cross)?;
        g = image_attention(&g, maps, poses, image)?;
    }
    Ok(g)
}

pub fn source_poses(inputs: &PipelineInputs) -> Vec<Pose> {
    inputs.views.iter().map(|v| v.pose).collect()
}

/// Decodes every grid into one world-frame cloud, cameras in order.
pub fn decode_all(grids: &[TriplaneGrid], params: &VolumeParams) -> Result<GaussianCloud> {
    let mut cloud = GaussianCloud::new(Frame::World);
    for (i, g) in grids.iter().enumerate() {
        cloud = concat(&cloud, &decode_gaussians(g, &params.decoder, i as u32)?)?;
    }
    Ok(cloud)
}

pub fn prune_stage(cfg: &RunConfig, cloud: &GaussianCloud, inputs: &PipelineInputs) -> Result<GaussianCloud> {
    if !cfg.prune.enabled {
        return Ok(cloud.clone());
    }
    let depths: Vec<Panorama> = inputs.views.iter().map(|v| v.depth.clone()).collect();
    depth_prune(cloud, &depths, &source_poses(inputs), &cfg.prune.options)
}

pub struct PipelineOutput {
    pub grids: Vec<TriplaneGrid>,
    pub decoded: GaussianCloud,
    pub pruned: GaussianCloud,
    pub colored: GaussianCloud,
    /// Volume Gaussians no view could see.
    pub occluded: usize,
    pub combined: GaussianCloud,
    pub render: Panorama,
    /// Render of the pixel-branch cloud alone.
    pub baseline: Panorama,
}

pub fn run_pipeline(cfg: &RunConfig, params: &VolumeParams, inputs: &PipelineInputs) -> Result<PipelineOutput> {
    cfg.validate()?;
    if inputs.feature_maps.len() < inputs.views.len() {
        return Err(Error::MissingFeatureMap(inputs.feature_maps.len()));
    }
    with_threads(cfg.threads, || {
        let dims = cfg.dims()?;
        let poses = source_poses(inputs);
        let grids = init_grids(cfg, params, inputs)?
            .iter()
            .map(|g| attend(g, params, &inputs.feature_maps, &poses))
            .collect::<Result<Vec<_>>>()?;
        let decoded = decode_all(&grids, params)?;
        let pruned = prune_stage(cfg, &decoded, inputs)?;
        let (colored, occluded) = colorize_cloud(&pruned, &inputs.views, &cfg.retrieval)?;
        let combined = concat(&inputs.pixel_cloud, &colored)?;
        let render = render_equirect(&combined, &inputs.target, dims, &cfg.render)?;
        let baseline = render_equirect(&inputs.pixel_cloud, &inputs.target, dims, &cfg.render)?;
        Ok(PipelineOutput {
            grids,
            decoded,
            pruned,
            colored,
            occluded,
            combined,
            render,
            baseline,
        })
    })
}

/// Benchmark inputs from the scene room: the dense surface cloud centers,
/// and floor and ceiling grid points with their normals.
pub fn bench_points(cfg: &RunConfig) -> Result<(Vec<CartPoint>, Vec<(CartPoint, Vector3<f64>)>)> {
    let s = &cfg.scene;
    let cloud = surface_cloud(&s.room, &s.sampling, &[], cfg.seed.wrapping_add(SURFACE_STREAM))?;
    let points = cloud.gaussians().iter().map(|g| g.position).collect();
    let mut oriented = Vec::new();
    for surface in [Surface::Floor, Surface::Ceiling] {
        let (axis, _) = surface.axis();
        let n = Vector3::ith(axis, 1.0);
        oriented.extend(s.room.surface_grid(surface, s.sampling.spacing).into_iter().map(|p| (p, n)));
    }
    Ok((points, oriented))
}

/// Masked-region comparison of the completed and incomplete renders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub masked_pixels: usize,
    pub ws_psnr_completed: f64,
    pub ws_psnr_incomplete: f64,
    pub volume_gaussians: usize,
    pub occluded: usize,
}

pub fn completion_report(out: &PipelineOutput, gt: &Panorama, mask: &[bool]) -> Result<CompletionReport> {
    Ok(CompletionReport {
        masked_pixels: mask.iter().filter(|m| **m).count(),
        ws_psnr_completed: ws_psnr_masked(&out.render, gt, mask)?,
        ws_psnr_incomplete: ws_psnr_masked(&out.baseline, gt, mask)?,
        volume_gaussians: out.colored.len(),
        occluded: out.occluded,
    })
}

/// Writes a triplane grid: tensors to `bin`, its origin next to it.
pub fn save_grid(grid: &TriplaneGrid, bin: &Path) -> Result<()> {
    write_tensors(bin, "triplane", &grid.to_tensors(""))?;
    save_poses(&grid_origin_path(bin), &[grid.origin])
}

pub fn load_grid(bin: &Path, cfg: &TriplaneConfig) -> Result<TriplaneGrid> {
    let origin = *load_poses(&grid_origin_path(bin))?
        .first()
        .ok_or_else(|| Error::Config("grid origin file is empty".into()))?;
    let (_, tensors) = read_tensors(bin)?;
    TriplaneGrid::from_tensors(cfg, origin, &tensors, "")
}

fn grid_origin_path(bin: &Path) -> PathBuf {
    bin.with_extension("origin.json")
}

/// Writes every stage artifact into `dir` and returns the paths.
pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (i, g) in out.grids.iter().enumerate() {
        let p = dir.join(files::grid(i));
        save_grid(g, &p)?;
        paths.push(p);
    }
    for (name, cloud) in [
        ("decoded.ply", &out.decoded),
        ("pruned.ply", &out.pruned),
        ("colored.ply", &out.colored),
        ("combined.ply", &out.combined),
    ] {
        let p = dir.join(name);
        write_ply(cloud, &p, PlyOptions::default())?;
        paths.push(p);
    }
    for (stem, pano) in [("render", &out.render), ("baseline", &out.baseline)] {
        let png = dir.join(format!("{stem}.png"));
        let exr = dir.join(format!("{stem}.exr"));
        let depth = dir.join(format!("{stem}_depth.exr"));
        pano.save_png(&png)?;
        pano.save_rgb_exr(&exr)?;
        pano.save_depth_exr(&depth)?;
        paths.extend([png, exr, depth]);
    }
    Ok(paths)
}
