//! Back-projection of view images into the atlas.

use image::RgbaImage;
use thiserror::Error;

use crate::atlas::{TexelState, TexelStatus, TextureAtlas};
use crate::genmask::{check_dims, MaskError, RegionMask};
use crate::mesh::InputImage;
use crate::render::{SimilarityMap, TexelVisMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectError {
    #[error(transparent)]
    Dimension(#[from] MaskError),
    #[error("the front view sees no texel of the mesh")]
    EmptyVisibility,
}

/// What one projection call changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectStats {
    pub written: usize,
    /// Texels that went from untextured to textured.
    pub newly_textured: usize,
}

fn pixel_rgba(img: &RgbaImage, pixel: u32) -> [u8; 4] {
    let w = img.width();
    img.get_pixel(pixel % w, pixel / w).0
}

/// Writes the photograph onto every texel the front view sees and marks those
/// texels protected. Pixels outside the photograph's matte are skipped so the
/// texels behind them stay open for generation.
pub fn project_front(
    atlas: &mut TextureAtlas,
    image: &InputImage,
    visibility: &TexelVisMap,
    similarity: &SimilarityMap,
    front_index: u8,
) -> Result<ProjectStats, ProjectError> {
    if visibility.is_empty() {
        return Err(ProjectError::EmptyVisibility);
    }
    check_dims("front image", visibility.view_size, image.pixels().dimensions())?;
    check_dims("similarity map", visibility.view_size, similarity.values.dimensions())?;
    check_dims("atlas", visibility.atlas_size, atlas.dimensions())?;
    let mut stats = ProjectStats::default();
    for e in &visibility.entries {
        let px = pixel_rgba(image.pixels(), e.pixel);
        if px[3] == 0 {
            continue;
        }
        let t = e.texel as usize;
        let old = *atlas.state(t);
        let state = TexelState {
            status: TexelStatus::Textured,
            protected: true,
            best_similarity: old.best_similarity.max(similarity.values[e.pixel as usize]),
            source_view: Some(front_index),
        };
        if !old.is_textured() {
            stats.newly_textured += 1;
        }
        atlas.write(t, [px[0], px[1], px[2]], state);
        stats.written += 1;
    }
    Ok(stats)
}

/// Overwrites texels whose pixel is labeled NEW or UPDATE with the generated
/// pixel. Protected texels are never touched, even when a pixel they share is
/// labeled for writing. The stored best similarity only ever grows.
pub fn project_view(
    atlas: &mut TextureAtlas,
    image: &RgbaImage,
    mask: &RegionMask,
    visibility: &TexelVisMap,
    similarity: &SimilarityMap,
    view_index: u8,
) -> Result<ProjectStats, ProjectError> {
    check_dims("generated image", visibility.view_size, image.dimensions())?;
    check_dims("region mask", visibility.view_size, mask.dimensions())?;
    check_dims("similarity map", visibility.view_size, similarity.values.dimensions())?;
    check_dims("atlas", visibility.atlas_size, atlas.dimensions())?;
    let mut stats = ProjectStats::default();
    for e in &visibility.entries {
        if !mask.label(e.pixel as usize).is_write() {
            continue;
        }
        let t = e.texel as usize;
        let old = *atlas.state(t);
        if old.protected {
            continue;
        }
        let px = pixel_rgba(image, e.pixel);
        let state = TexelState {
            status: TexelStatus::Textured,
            protected: false,
            best_similarity: old.best_similarity.max(similarity.values[e.pixel as usize]),
            source_view: Some(view_index),
        };
        if !old.is_textured() {
            stats.newly_textured += 1;
        }
        atlas.write(t, [px[0], px[1], px[2]], state);
        stats.written += 1;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use image::Rgba;
    use nalgebra::{Matrix3, Vector2, Vector3};

    use super::*;
    use crate::genmask::{classify, Region};
    use crate::grid::{Grid, Mask};
    use crate::mesh::{compute_normals, Mesh};
    use crate::render::{render_view, texel_visibility, TexelVis, UvLayout};
    use crate::views::CameraMats;

    fn frontal(distance: f64, size: u32) -> CameraMats {
        CameraMats {
            eye: Vector3::new(0.0, -distance, 0.0),
            rotation: Matrix3::from_rows(&[
                Vector3::x().transpose(),
                Vector3::z().transpose(),
                Vector3::y().transpose(),
            ]),
            focal_px: size as f64 * 0.5 / (22.5f64).to_radians().tan(),
            principal: Vector2::new(size as f64 * 0.5, size as f64 * 0.5),
            width: size,
            height: size,
        }
    }

    /// Quad spanning [-0.5, 0.5]² in x/z at y = 0 with uvs over the unit square.
    fn quad() -> Mesh {
        let mut m = Mesh::new(
            vec![
                Vector3::new(-0.5, 0.0, -0.5),
                Vector3::new(0.5, 0.0, -0.5),
                Vector3::new(0.5, 0.0, 0.5),
                Vector3::new(-0.5, 0.0, 0.5),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        m.uvs = Some(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ]);
        compute_normals(&m).unwrap().0
    }

    struct Scene {
        mesh: Mesh,
        cams: CameraMats,
        atlas: TextureAtlas,
        vis: TexelVisMap,
        sim: SimilarityMap,
    }

    fn scene(atlas_res: u32, view: u32, distance: f64) -> Scene {
        let mesh = quad();
        let cams = frontal(distance, view);
        let atlas = TextureAtlas::new(Arc::new(UvLayout::build(&mesh, atlas_res, atlas_res).unwrap()));
        let r = render_view(&mesh, &cams);
        let vis = texel_visibility(&mesh, &atlas, &cams, &r.depth);
        Scene {
            mesh,
            cams,
            atlas,
            vis,
            sim: r.similarity,
        }
    }

    fn solid(w: u32, rgba: [u8; 4]) -> RgbaImage {
        RgbaImage::from_pixel(w, w, Rgba(rgba))
    }

    #[test]
    fn red_front_image_protects_visible_texels() {
        let mut s = scene(32, 64, 2.0);
        let img = InputImage::new(solid(64, [255, 0, 0, 255])).unwrap();
        let stats = project_front(&mut s.atlas, &img, &s.vis, &s.sim, 1).unwrap();
        assert_eq!(stats.written, s.vis.len());
        for e in &s.vis.entries {
            let t = e.texel as usize;
            assert_eq!(s.atlas.color(t), [255, 0, 0, 255]);
            assert!(s.atlas.state(t).protected);
            assert_eq!(s.atlas.state(t).source_view, Some(1));
        }
    }

    #[test]
    fn front_projection_is_idempotent() {
        let mut s = scene(32, 64, 2.0);
        let img = InputImage::new(RgbaImage::from_fn(64, 64, |x, y| Rgba([x as u8 * 4, y as u8 * 4, 7, 255]))).unwrap();
        project_front(&mut s.atlas, &img, &s.vis, &s.sim, 1).unwrap();
        let once = s.atlas.clone();
        project_front(&mut s.atlas, &img, &s.vis, &s.sim, 1).unwrap();
        assert_eq!(once, s.atlas);
    }

    #[test]
    fn empty_visibility_is_an_error() {
        let mut s = scene(8, 16, 2.0);
        s.vis.entries.clear();
        let img = InputImage::new(solid(16, [1, 1, 1, 255])).unwrap();
        assert_eq!(
            project_front(&mut s.atlas, &img, &s.vis, &s.sim, 1),
            Err(ProjectError::EmptyVisibility)
        );
    }

    #[test]
    fn transparent_front_pixels_are_skipped() {
        let mut s = scene(16, 32, 2.0);
        let img = InputImage::new(RgbaImage::from_fn(32, 32, |x, _| {
            Rgba([200, 0, 0, if x < 16 { 255 } else { 0 }])
        }))
        .unwrap();
        project_front(&mut s.atlas, &img, &s.vis, &s.sim, 1).unwrap();
        for e in &s.vis.entries {
            let textured = s.atlas.state(e.texel as usize).is_textured();
            assert_eq!(textured, e.pixel % 32 < 16);
        }
    }

    #[test]
    fn checkerboard_survives_front_projection() {
        // Distance chosen so the quad fills most of the frame.
        let mut s = scene(128, 256, 1.3);
        let cell = 32u32;
        let board = |x: u32, y: u32| -> [u8; 4] {
            if (x / cell + y / cell) % 2 == 0 {
                [255, 255, 255, 255]
            } else {
                [0, 0, 0, 255]
            }
        };
        let img = InputImage::new(RgbaImage::from_fn(256, 256, |x, y| Rgba(board(x, y)))).unwrap();
        project_front(&mut s.atlas, &img, &s.vis, &s.sim, 1).unwrap();
        // Analytic oracle: texel center -> uv -> quad point -> pinhole pixel.
        let (mut total, mut exact) = (0, 0);
        for t in s.atlas.layout().covered_texels() {
            let (tx, ty) = ((t % 128) as f64 + 0.5, (t / 128) as f64 + 0.5);
            let (u, v) = (tx / 128.0, 1.0 - ty / 128.0);
            let p = Vector3::new(u - 0.5, 0.0, v - 0.5);
            let q = s.cams.project(&p).screen;
            if q.x < 0.0 || q.y < 0.0 || q.x >= 256.0 || q.y >= 256.0 {
                continue;
            }
            total += 1;
            if s.atlas.color(t) == board(q.x as u32, q.y as u32) {
                exact += 1;
            }
        }
        assert!(total > 10_000);
        let frac = exact as f64 / total as f64;
        assert!(frac >= 0.95, "{frac}");
        let _ = &s.mesh;
    }

    #[test]
    fn all_keep_mask_is_a_no_op() {
        let mut s = scene(16, 32, 2.0);
        let before = s.atlas.clone();
        let mask = RegionMask::filled(32, 32, Region::Keep);
        let stats = project_view(&mut s.atlas, &solid(32, [0, 255, 0, 255]), &mask, &s.vis, &s.sim, 2).unwrap();
        assert_eq!(stats.written, 0);
        assert_eq!(before, s.atlas);
    }

    #[test]
    fn all_new_mask_paints_visible_texels() {
        let mut s = scene(16, 32, 2.0);
        let mask = classify(&s.vis, &s.atlas, &s.sim, 0.1).unwrap();
        assert!(mask.counts().new > 0);
        project_view(&mut s.atlas, &solid(32, [0, 255, 0, 255]), &mask, &s.vis, &s.sim, 3).unwrap();
        for e in &s.vis.entries {
            assert_eq!(s.atlas.color(e.texel as usize), [0, 255, 0, 255]);
            assert_eq!(s.atlas.state(e.texel as usize).source_view, Some(3));
        }
    }

    #[test]
    fn single_update_texel_trace() {
        let layout = Arc::new(UvLayout::empty(2, 2));
        let mut atlas = TextureAtlas::new(layout);
        let prior = TexelState {
            status: TexelStatus::Textured,
            protected: false,
            best_similarity: 0.6,
            source_view: Some(0),
        };
        atlas.write(3, [1, 1, 1], prior);
        let vis = TexelVisMap {
            view_size: (2, 2),
            atlas_size: (2, 2),
            entries: vec![TexelVis {
                texel: 3,
                pixel: 1,
                similarity: 0.9,
                depth: 1.0,
            }],
        };
        let sim = SimilarityMap {
            values: Grid::from_vec(2, 2, vec![0.0, 0.9, 0.0, 0.0]).unwrap(),
            foreground: Mask::new(2, 2, true),
        };
        let mask = classify(&vis, &atlas, &sim, 0.1).unwrap();
        assert_eq!(mask.label(1), Region::Update);
        let img = RgbaImage::from_fn(2, 2, |x, y| Rgba([10 * x as u8, 20 * y as u8, 99, 255]));
        project_view(&mut atlas, &img, &mask, &vis, &sim, 4).unwrap();
        assert_eq!(atlas.state(3).best_similarity, 0.9);
        assert_eq!(atlas.color(3), [10, 0, 99, 255]);
        assert_eq!(atlas.state(3).source_view, Some(4));
    }

    #[test]
    fn protected_texels_survive_write_labels() {
        let mut s = scene(16, 32, 2.0);
        let front = InputImage::new(solid(32, [9, 9, 9, 255])).unwrap();
        project_front(&mut s.atlas, &front, &s.vis, &s.sim, 1).unwrap();
        let protected = s.atlas.protected_texels();
        let mask = RegionMask::filled(32, 32, Region::Update);
        let stats = project_view(&mut s.atlas, &solid(32, [0, 0, 200, 255]), &mask, &s.vis, &s.sim, 5).unwrap();
        assert_eq!(stats.written, 0);
        assert_eq!(protected, s.atlas.protected_texels());
    }

    #[test]
    fn mismatched_image_is_rejected() {
        let mut s = scene(8, 16, 2.0);
        let mask = RegionMask::filled(16, 16, Region::New);
        assert!(matches!(
            project_view(&mut s.atlas, &solid(15, [0; 4]), &mask, &s.vis, &s.sim, 2),
            Err(ProjectError::Dimension(_))
        ));
    }
}
