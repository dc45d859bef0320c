//! Progressive multi-view texturing for single-image human reconstruction.
//!
//! Given a reconstructed mesh and one matted front photograph, the pipeline
//! fills a UV texture atlas view by view: it rasterizes depth and observation
//! quality for a fixed ring of cameras, classifies every visible pixel into a
//! five-way generation mask, asks a pluggable image generator for the missing
//! view, back-projects the result and smooths the seams between regions.
//!
//! The crate is organized bottom-up:
//!
//! * [`mesh`]: ingestion, normals, quadric simplification, naive unwrap, baking
//! * [`views`]: the ten-camera set and pinhole camera model
//! * [`render`]: z-buffer rasterizer, similarity, color renders, texel visibility
//! * [`atlas`]: texel colors plus per-texel history
//! * [`genmask`], [`project`], [`seams`]: the texturing state machine
//! * [`prompts`], [`genbackend`]: prompt assembly and generator transport
//! * [`pipeline`]: orchestration, config and reports
//! * [`metrics`]: PSNR / SSIM evaluation

pub mod atlas;
pub mod fixtures;
pub mod genbackend;
pub mod genmask;
pub mod grid;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod project;
pub mod prompts;
pub mod render;
pub mod seams;
pub mod views;

pub use atlas::{TexelState, TexelStatus, TextureAtlas};
pub use genbackend::{Backend, GenImage, GenMode, GenRequest, MockBackend, RemoteBackend};
pub use genmask::{Region, RegionMask};
pub use grid::{Grid, Mask};
pub use mesh::{InputImage, Mesh};
pub use pipeline::{RunConfig, RunReport, Session};
pub use render::{DepthMap, SimilarityMap, TexelVisMap, UvLayout};
pub use views::{Aabb, CameraMats, ViewRole, Viewpoint};
