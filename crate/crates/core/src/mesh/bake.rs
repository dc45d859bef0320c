use std::sync::Arc;

use super::{Mesh, MeshError};
use crate::atlas::{TexelState, TexelStatus, TextureAtlas};
use crate::render::UvLayout;

/// Rasterizes vertex colors into a square atlas by barycentric interpolation.
/// Covered texels become textured with similarity 0 and no source view.
pub fn bake_vertex_colors(mesh: &Mesh, atlas_resolution: u32) -> Result<TextureAtlas, MeshError> {
    if mesh.uvs.is_none() {
        return Err(MeshError::MissingUvs);
    }
    let colors = mesh.vertex_colors.as_ref().ok_or(MeshError::MissingColors)?;
    let layout = Arc::new(UvLayout::build(mesh, atlas_resolution, atlas_resolution)?);
    Ok(bake_into(mesh, colors, layout))
}

pub(crate) fn bake_into(
    mesh: &Mesh,
    colors: &[nalgebra::Vector3<f64>],
    layout: Arc<UvLayout>,
) -> TextureAtlas {
    let mut atlas = TextureAtlas::new(layout.clone());
    let state = TexelState {
        status: TexelStatus::Textured,
        protected: false,
        best_similarity: 0.0,
        source_view: None,
    };
    for t in layout.covered_texels() {
        let (f, b) = layout.owner(t).unwrap();
        let face = mesh.faces[f as usize];
        let c = (0..3).fold(nalgebra::Vector3::zeros(), |acc, k| {
            acc + colors[face[k] as usize] * b[k] as f64
        });
        let rgb = [0, 1, 2].map(|k| (c[k].clamp(0.0, 1.0) * 255.0).round() as u8);
        atlas.write(t, rgb, state);
    }
    atlas
}
