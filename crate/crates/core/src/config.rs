//! The single declarative document that parameterizes a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coordsys::BenchSpec;
use crate::error::{Error, Result};
use crate::geometry::{ImageDims, Pose};
use crate::metrics::PccMode;
use crate::prune::PruneOptions;
use crate::raster::RenderOptions;
use crate::retrieval::RetrievalOptions;
use crate::scene::{Room, Surface, SurfaceSampling};
use crate::triplane::{GridRes, InitMode, ParamShapes, TriplaneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumeConfig {
    /// Cross-plane + image attention blocks.
    pub layers: usize,
    pub attn_dim: usize,
    pub decoder_hidden: usize,
    pub init_mode: InitMode,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            attn_dim: 16,
            decoder_hidden: 32,
            init_mode: InitMode::Shared,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneStage {
    pub enabled: bool,
    pub options: PruneOptions,
}

impl Default for PruneStage {
    fn default() -> Self {
        Self {
            enabled: true,
            options: PruneOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub room: Room,
    pub sampling: SurfaceSampling,
    /// Source camera centers, world meters. Cameras are axis-aligned.
    pub cameras: Vec<[f64; 3]>,
    /// Center of the evaluation camera.
    pub target: [f64; 3],
    /// Surfaces left out of the pixel-branch cloud.
    pub masked: Vec<Surface>,
    /// Pixel stride of the synthetic feature maps.
    pub feature_stride: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room: Room::default(),
            sampling: SurfaceSampling::default(),
            cameras: vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]],
            target: [0.0; 3],
            masked: vec![Surface::WallPosZ],
            feature_stride: 8,
        }
    }
}

impl SceneConfig {
    pub fn camera_poses(&self) -> Vec<Pose> {
        self.cameras.iter().map(|c| Pose::from_translation((*c).into())).collect()
    }

    pub fn target_pose(&self) -> Pose {
        Pose::from_translation(self.target.into())
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.cameras.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        for (index, c) in self.cameras.iter().enumerate() {
            if !self.room.contains(&(*c).into()) {
                return Err(Error::CameraOutsideRoom { index });
            }
        }
        if !self.room.contains(&self.target.into()) {
            return Err(Error::CameraOutsideRoom { index: self.cameras.len() });
        }
        if self.feature_stride == 0 {
            return Err(Error::Config("feature_stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub radius: f64,
    pub half_height: f64,
    /// Budget reference: the systems share this grid's plane-cell count.
    pub grid: GridRes,
    pub coverage_width: usize,
    /// Shell stride of the Cartesian far-plane sweep.
    pub cartesian_shell_step: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            radius: 4.0,
            half_height: 2.0,
            grid: GridRes::new(16, 64, 128),
            coverage_width: 64,
            cartesian_shell_step: 4,
        }
    }
}

impl BenchConfig {
    pub fn spec(&self) -> Result<BenchSpec> {
        Ok(BenchSpec {
            radius: self.radius,
            half_height: self.half_height,
            grid: self.grid,
            coverage_dims: ImageDims::new(self.coverage_width, self.coverage_width / 2)?,
            cartesian_shell_step: self.cartesian_shell_step,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub pcc: PccMode,
    /// Latitude fraction excluded at each pole for the cubemap comparison.
    pub polar_band: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pcc: PccMode::PerImage,
            polar_band: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `0` uses every core.
    pub threads: usize,
    pub width: usize,
    pub height: usize,
    pub render: RenderOptions,
    pub triplane: TriplaneConfig,
    pub volume: VolumeConfig,
    pub retrieval: RetrievalOptions,
    pub prune: PruneStage,
    pub scene: SceneConfig,
    pub bench: BenchConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            width: 1024,
            height: 512,
            render: RenderOptions::default(),
            triplane: TriplaneConfig::default(),
            volume: VolumeConfig::default(),
            retrieval: RetrievalOptions::default(),
            prune: PruneStage::default(),
            scene: SceneConfig::default(),
            bench: BenchConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn dims(&self) -> Result<ImageDims> {
        ImageDims::new(self.width, self.height)
    }

    pub fn param_shapes(&self) -> ParamShapes {
        ParamShapes {
            layers: self.volume.layers,
            attn_dim: self.volume.attn_dim,
            image_dim: self.triplane.feature_dim,
            decoder_hidden: self.volume.decoder_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims()?;
        self.render.validate()?;
        self.triplane.validate()?;
        self.retrieval.validate()?;
        self.prune.options.validate()?;
        self.scene.validate()?;
        let s = self.scene.feature_stride;
        if dims.width() % s != 0 || dims.height() % s != 0 || dims.height() / s < 2 {
            return Err(Error::Config(format!("feature_stride {s} does not divide {}x{}", dims.width(), dims.height())));
        }
        if self.volume.attn_dim == 0 || self.volume.decoder_hidden == 0 {
            return Err(Error::Config("attention and decoder widths must be positive".into()));
        }
        if !(self.bench.radius > 0.0 && self.bench.half_height > 0.0) {
            return Err(Error::Config("bench bounds must be positive".into()));
        }
        if self.bench.cartesian_shell_step == 0 {
            return Err(Error::Config("cartesian_shell_step must be positive".into()));
        }
        self.bench.spec()?;
        if !(0.0..0.5).contains(&self.metrics.polar_band) {
            return Err(Error::Config("polar_band must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}
