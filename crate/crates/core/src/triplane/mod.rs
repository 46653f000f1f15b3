//! Cylindrical triplane: storage, initialization, attention and decoding.

pub mod attention;
pub mod config;
pub mod decode;
pub mod features;
pub mod grid;
pub mod init;
pub mod params;

pub use attention::{cross_plane_attention, image_attention, softmax};
pub use config::{storage_cells, GridRes, TriplaneConfig};
pub use decode::{decode_gaussians, grid_cells, in_cell};
pub use features::{load_points, save_points, FeatureMap, FeaturePoint};
pub use grid::{cell_center, cell_of, CellIndex, Plane, PlaneKind, TriplaneGrid};
pub use init::{init_from_points, InitMode};
pub use params::{AttentionParams, BaseEmbedding, DecoderParams, ParamShapes, VolumeParams};
