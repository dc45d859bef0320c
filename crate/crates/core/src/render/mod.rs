//! Software z-buffer rasterizer and the per-view maps derived from it.
//!
//! One rasterization pass produces a G-buffer (visible face, depth and
//! perspective-correct barycentrics per pixel). Depth, similarity and color
//! renders are views of that buffer, so their silhouettes agree exactly.
//! Both front- and back-facing triangles are rasterized; the nearest wins and
//! exact depth ties go to the lower face index.

mod uv;

pub use uv::{uv_to_texel, UvLayout};

use image::{GrayImage, ImageBuffer, Luma, Rgba, RgbaImage};
use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::atlas::TextureAtlas;
use crate::grid::{Grid, Mask};
use crate::mesh::Mesh;
use crate::views::CameraMats;

pub const NO_FACE: u32 = u32::MAX;
/// Triangles with a vertex closer than this to the eye plane are skipped.
const NEAR_PLANE: f64 = 1e-6;
const BAND_ROWS: u32 = 16;
/// Visibility tolerance as a fraction of the observed depth range.
pub const DEPTH_EPS_FRACTION: f64 = 1e-3;
pub const MAGENTA: [u8; 4] = [255, 0, 255, 255];

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("mesh not unwrapped")]
    MissingUvs,
    #[error("atlas is {atlas:?} but the mesh layout is {layout:?}")]
    AtlasMismatch { atlas: (u32, u32), layout: (u32, u32) },
}

/// Raw rasterizer output.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: u32,
    pub height: u32,
    pub face: Vec<u32>,
    pub depth: Vec<f64>,
    pub bary: Vec<[f32; 3]>,
}

impl GBuffer {
    pub fn is_foreground(&self, pixel: usize) -> bool {
        self.face[pixel] != NO_FACE
    }

    pub fn foreground(&self) -> Mask {
        Mask::from_vec(self.width, self.height, self.face.iter().map(|&f| f != NO_FACE).collect())
            .unwrap()
    }
}

#[derive(Debug, Clone, Copy)]
struct ScreenTri {
    p: [Vector2<f64>; 3],
    inv_z: [f64; 3],
    area: f64,
    min: Vector2<f64>,
    max: Vector2<f64>,
}

fn setup(mesh: &Mesh, cams: &CameraMats) -> Vec<Option<ScreenTri>> {
    let projected: Vec<_> = mesh.vertices.iter().map(|v| cams.project(v)).collect();
    mesh.faces
        .iter()
        .map(|f| {
            let q = f.map(|i| projected[i as usize]);
            if q.iter().any(|p| p.depth <= NEAR_PLANE || !p.screen.x.is_finite()) {
                return None;
            }
            let p = q.map(|p| p.screen);
            let area = edge(p[0], p[1], p[2]);
            if area == 0.0 || !area.is_finite() {
                return None;
            }
            Some(ScreenTri {
                p,
                inv_z: q.map(|p| 1.0 / p.depth),
                area,
                min: p[0].inf(&p[1]).inf(&p[2]),
                max: p[0].sup(&p[1]).sup(&p[2]),
            })
        })
        .collect()
}

#[inline]
fn edge(a: Vector2<f64>, b: Vector2<f64>, p: Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Screen-space weights of `p` in `t`; inside iff all are non-negative.
#[inline]
fn screen_weights(t: &ScreenTri, p: Vector2<f64>) -> [f64; 3] {
    [
        edge(t.p[1], t.p[2], p) / t.area,
        edge(t.p[2], t.p[0], p) / t.area,
        edge(t.p[0], t.p[1], p) / t.area,
    ]
}

/// Perspective-correct depth and barycentrics from screen weights.
#[inline]
fn perspective(t: &ScreenTri, l: [f64; 3]) -> (f64, [f64; 3]) {
    let inv = l[0] * t.inv_z[0] + l[1] * t.inv_z[1] + l[2] * t.inv_z[2];
    let z = 1.0 / inv;
    (z, [l[0] * t.inv_z[0] * z, l[1] * t.inv_z[1] * z, l[2] * t.inv_z[2] * z])
}

/// Z-buffer rasterization at pixel centers. Row bands are rasterized in
/// parallel, each visiting triangles in index order, so results are
/// deterministic.
pub fn rasterize(mesh: &Mesh, cams: &CameraMats) -> GBuffer {
    let (w, h) = (cams.width, cams.height);
    let n = w as usize * h as usize;
    let mut gb = GBuffer {
        width: w,
        height: h,
        face: vec![NO_FACE; n],
        depth: vec![f64::INFINITY; n],
        bary: vec![[0.0; 3]; n],
    };
    if w == 0 || h == 0 {
        return gb;
    }
    let tris = setup(mesh, cams);
    let bands = h.div_ceil(BAND_ROWS) as usize;
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); bands];
    for (fi, t) in tris.iter().enumerate() {
        let Some(t) = t else { continue };
        if t.max.x < 0.5 || t.min.x > w as f64 - 0.5 || t.max.y < 0.5 || t.min.y > h as f64 - 0.5 {
            continue;
        }
        let y0 = ((t.min.y - 0.5).ceil().max(0.0) as u32).min(h - 1);
        let y1 = ((t.max.y - 0.5).floor().max(0.0) as u32).min(h - 1);
        for b in (y0 / BAND_ROWS)..=(y1 / BAND_ROWS) {
            bins[b as usize].push(fi as u32);
        }
    }

    let row_len = w as usize * BAND_ROWS as usize;
    gb.face
        .par_chunks_mut(row_len)
        .zip(gb.depth.par_chunks_mut(row_len))
        .zip(gb.bary.par_chunks_mut(row_len))
        .enumerate()
        .for_each(|(band, ((face, depth), bary))| {
            let band_y0 = band as u32 * BAND_ROWS;
            let band_y1 = (band_y0 + BAND_ROWS).min(h);
            for &fi in &bins[band] {
                let t = tris[fi as usize].as_ref().unwrap();
                let x0 = (t.min.x - 0.5).ceil().max(0.0) as u32;
                let x1 = ((t.max.x - 0.5).floor() as i64).min(w as i64 - 1);
                let y0 = ((t.min.y - 0.5).ceil().max(band_y0 as f64)) as u32;
                let y1 = ((t.max.y - 0.5).floor() as i64).min(band_y1 as i64 - 1);
                if x1 < x0 as i64 || y1 < y0 as i64 {
                    continue;
                }
                for y in y0..=y1 as u32 {
                    for x in x0..=x1 as u32 {
                        let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                        let l = screen_weights(t, p);
                        if l[0] < 0.0 || l[1] < 0.0 || l[2] < 0.0 {
                            continue;
                        }
                        let (z, b) = perspective(t, l);
                        let i = (y - band_y0) as usize * w as usize + x as usize;
                        if z < depth[i] {
                            depth[i] = z;
                            face[i] = fi;
                            bary[i] = b.map(|v| v as f32);
                        }
                    }
                }
            }
        });
    gb
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    /// Camera-axis depth; ignored where not foreground.
    pub values: Grid<f32>,
    pub foreground: Mask,
    /// Visible face per pixel (`NO_FACE` for background).
    pub faces: Grid<u32>,
    pub near: f32,
    pub far: f32,
}

impl DepthMap {
    pub fn from_gbuffer(gb: &GBuffer) -> Self {
        let (w, h) = (gb.width, gb.height);
        let mut near = f32::INFINITY;
        let mut far = f32::NEG_INFINITY;
        let values: Vec<f32> = gb
            .depth
            .iter()
            .zip(&gb.face)
            .map(|(&z, &f)| {
                if f == NO_FACE {
                    0.0
                } else {
                    let z = z as f32;
                    near = near.min(z);
                    far = far.max(z);
                    z
                }
            })
            .collect();
        if near > far {
            near = 0.0;
            far = 0.0;
        }
        Self {
            values: Grid::from_vec(w, h, values).unwrap(),
            foreground: gb.foreground(),
            faces: Grid::from_vec(w, h, gb.face.clone()).unwrap(),
            near,
            far,
        }
    }

    /// Tolerance used by the texel visibility depth test.
    pub fn depth_eps(&self) -> f64 {
        let range = (self.far - self.near) as f64;
        (DEPTH_EPS_FRACTION * range).max(1e-6 * self.far.abs() as f64).max(1e-9)
    }

    /// 16-bit debug image: near is bright, background 0.
    pub fn to_image16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let (near, far) = (self.near as f64, self.far as f64);
        ImageBuffer::from_fn(self.values.width(), self.values.height(), |x, y| {
            if !*self.foreground.get(x, y) {
                return Luma([0]);
            }
            let z = *self.values.get(x, y) as f64;
            let t = if far > near { (far - z) / (far - near) } else { 1.0 };
            Luma([1 + (t.clamp(0.0, 1.0) * 65534.0).round() as u16])
        })
    }
}

pub fn render_depth(mesh: &Mesh, cams: &CameraMats) -> DepthMap {
    DepthMap::from_gbuffer(&rasterize(mesh, cams))
}

/// Depth for a depth-conditioned generator, plus the foreground it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningDepth {
    pub image: GrayImage,
    /// The farthest foreground pixel maps to 0; this keeps it distinguishable.
    pub foreground: Mask,
}

/// `255 * (far - z) / (far - near)`, rounded half up; background 0.
pub fn export_conditioning_depth(depth: &DepthMap) -> ConditioningDepth {
    let (near, far) = (depth.near as f64, depth.far as f64);
    let image = GrayImage::from_fn(depth.values.width(), depth.values.height(), |x, y| {
        if !*depth.foreground.get(x, y) {
            return Luma([0]);
        }
        if far == near {
            return Luma([255]);
        }
        let z = *depth.values.get(x, y) as f64;
        let v = 255.0 * (far - z) / (far - near);
        Luma([(v + 0.5).floor().clamp(0.0, 255.0) as u8])
    });
    ConditioningDepth {
        image,
        foreground: depth.foreground.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    /// Clamped cosine between the surface normal and the direction to the
    /// camera; 0 on background.
    pub values: Grid<f32>,
    pub foreground: Mask,
}

impl SimilarityMap {
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.values.width(), self.values.height(), |x, y| {
            Luma([(self.values.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }
}

/// Interpolated unit normal at barycentric `b` of `face`, or the geometric
/// normal when the mesh carries none.
#[inline]
pub(crate) fn surface_normal(mesh: &Mesh, face: usize, b: [f64; 3]) -> Vector3<f64> {
    let f = mesh.faces[face];
    let n = match &mesh.normals {
        Some(ns) => ns[f[0] as usize] * b[0] + ns[f[1] as usize] * b[1] + ns[f[2] as usize] * b[2],
        None => mesh.face_cross(face),
    };
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vector3::zeros()
    }
}

#[inline]
pub(crate) fn surface_point(mesh: &Mesh, face: usize, b: [f64; 3]) -> Vector3<f64> {
    let [p0, p1, p2] = mesh.corners(face);
    p0 * b[0] + p1 * b[1] + p2 * b[2]
}

pub fn similarity_from_gbuffer(mesh: &Mesh, cams: &CameraMats, gb: &GBuffer) -> SimilarityMap {
    let values: Vec<f32> = (0..gb.face.len())
        .into_par_iter()
        .map(|i| {
            let f = gb.face[i];
            if f == NO_FACE {
                return 0.0;
            }
            let b = gb.bary[i].map(|v| v as f64);
            let p = surface_point(mesh, f as usize, b);
            let n = surface_normal(mesh, f as usize, b);
            let to_cam = (cams.eye - p).normalize();
            n.dot(&to_cam).clamp(0.0, 1.0) as f32
        })
        .collect();
    SimilarityMap {
        values: Grid::from_vec(gb.width, gb.height, values).unwrap(),
        foreground: gb.foreground(),
    }
}

pub fn render_similarity(mesh: &Mesh, cams: &CameraMats) -> SimilarityMap {
    similarity_from_gbuffer(mesh, cams, &rasterize(mesh, cams))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorRender {
    /// Foreground pixels are opaque; untextured texels render magenta.
    pub image: RgbaImage,
    pub foreground: Mask,
    /// Foreground pixels whose sampled texel carries a color.
    pub textured: Mask,
}

pub fn color_from_gbuffer(mesh: &Mesh, atlas: &TextureAtlas, gb: &GBuffer) -> Result<ColorRender, RenderError> {
    let uvs = mesh.uvs.as_ref().ok_or(RenderError::MissingUvs)?;
    let layout = atlas.layout();
    if (layout.width(), layout.height()) != atlas.dimensions() {
        return Err(RenderError::AtlasMismatch {
            atlas: atlas.dimensions(),
            layout: (layout.width(), layout.height()),
        });
    }
    let samples: Vec<Option<[u8; 4]>> = (0..gb.face.len())
        .into_par_iter()
        .map(|i| {
            let f = gb.face[i];
            if f == NO_FACE {
                return None;
            }
            let b = gb.bary[i];
            let face = mesh.faces[f as usize];
            let uv = uvs[face[0] as usize] * b[0] as f64
                + uvs[face[1] as usize] * b[1] as f64
                + uvs[face[2] as usize] * b[2] as f64;
            let texel = layout.locate(f, uv)?;
            atlas.state(texel).is_textured().then(|| atlas.color(texel))
        })
        .collect();
    let (w, h) = (gb.width, gb.height);
    let mut image = RgbaImage::new(w, h);
    let mut textured = Mask::new(w, h, false);
    for (i, s) in samples.into_iter().enumerate() {
        if gb.face[i] == NO_FACE {
            continue;
        }
        let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
        match s {
            Some(c) => {
                image.put_pixel(x, y, Rgba([c[0], c[1], c[2], 255]));
                textured[i] = true;
            }
            None => image.put_pixel(x, y, Rgba(MAGENTA)),
        }
    }
    Ok(ColorRender {
        image,
        foreground: gb.foreground(),
        textured,
    })
}

/// Nearest-texel render of the current atlas.
pub fn render_color(mesh: &Mesh, atlas: &TextureAtlas, cams: &CameraMats) -> Result<ColorRender, RenderError> {
    color_from_gbuffer(mesh, atlas, &rasterize(mesh, cams))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelVis {
    pub texel: u32,
    pub pixel: u32,
    /// Observation quality at the texel's own surface point.
    pub similarity: f32,
    pub depth: f32,
}

/// Atlas texels seen by one view, in texel order.
#[derive(Debug, Clone, PartialEq)]
pub struct TexelVisMap {
    pub view_size: (u32, u32),
    pub atlas_size: (u32, u32),
    pub entries: Vec<TexelVis>,
}

impl TexelVisMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Per-pixel count of visible texels.
    pub fn pixel_hits(&self) -> Grid<u32> {
        let mut g = Grid::new(self.view_size.0, self.view_size.1, 0u32);
        for e in &self.entries {
            g[e.pixel as usize] += 1;
        }
        g
    }
}

/// The pixel containing `s`, or at a silhouette the nearest foreground pixel
/// among its 8 neighbours.
fn foreground_pixel(depth: &DepthMap, s: Vector2<f64>) -> Option<usize> {
    let (w, h) = (depth.faces.width() as i64, depth.faces.height() as i64);
    let (px, py) = (s.x as i64, s.y as i64);
    let own = (py * w + px) as usize;
    if depth.faces[own] != NO_FACE {
        return Some(own);
    }
    let mut best: Option<(f64, usize)> = None;
    for y in (py - 1).max(0)..=(py + 1).min(h - 1) {
        for x in (px - 1).max(0)..=(px + 1).min(w - 1) {
            let i = (y * w + x) as usize;
            if depth.faces[i] == NO_FACE {
                continue;
            }
            let d = (x as f64 + 0.5 - s.x).powi(2) + (y as f64 + 0.5 - s.y).powi(2);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Whether any face visible around `s` other than `own` covers the exact
/// screen point `s` nearer than `limit`.
fn occluded_at(depth: &DepthMap, tris: &[Option<ScreenTri>], own: u32, s: Vector2<f64>, limit: f64) -> bool {
    let (w, h) = (depth.faces.width() as i64, depth.faces.height() as i64);
    let (px, py) = (s.x as i64, s.y as i64);
    let mut tried = [NO_FACE; 9];
    let mut n = 0;
    for y in (py - 1).max(0)..=(py + 1).min(h - 1) {
        for x in (px - 1).max(0)..=(px + 1).min(w - 1) {
            let g = depth.faces[(y * w + x) as usize];
            if g == NO_FACE || g == own || tried[..n].contains(&g) {
                continue;
            }
            tried[n] = g;
            n += 1;
            let Some(tri) = tris[g as usize].as_ref() else { continue };
            let l = screen_weights(tri, s);
            if l.iter().all(|&v| v >= 0.0) && perspective(tri, l).0 < limit {
                return true;
            }
        }
    }
    false
}

/// Reconstructs every covered texel's surface point and keeps it when it lands
/// on or next to a foreground pixel, its triangle faces the camera, and it is
/// not occluded. The face at a pixel center need not cover a texel near a
/// triangle edge, so occlusion is tested at the texel's exact screen point
/// against every face the z-buffer shows in the surrounding 3x3 pixels; an
/// occluder must be nearer by more than `depth.depth_eps()`.
pub fn texel_visibility(
    mesh: &Mesh,
    atlas: &TextureAtlas,
    cams: &CameraMats,
    depth: &DepthMap,
) -> TexelVisMap {
    let layout = atlas.layout();
    let (w, h) = (cams.width, cams.height);
    let eps = depth.depth_eps();
    let tris = setup(mesh, cams);
    let texels: Vec<usize> = layout.covered_texels().collect();
    let entries: Vec<TexelVis> = texels
        .par_iter()
        .filter_map(|&t| {
            let (f, b) = layout.owner(t)?;
            let b = b.map(|v| v as f64);
            let p = surface_point(mesh, f as usize, b);
            let proj = cams.project(&p);
            if proj.depth <= NEAR_PLANE {
                return None;
            }
            let s = proj.screen;
            if !(s.x >= 0.0 && s.y >= 0.0 && s.x < w as f64 && s.y < h as f64) {
                return None;
            }
            // Facing is a property of the triangle; the shading normal can
            // tip away near silhouettes of coarse smooth-shaded meshes.
            let to_cam = (cams.eye - p).normalize();
            if !(mesh.face_cross(f as usize).dot(&to_cam) > 0.0) {
                return None;
            }
            let sim = surface_normal(mesh, f as usize, b).dot(&to_cam).max(0.0);
            let pixel = foreground_pixel(depth, s)?;
            if occluded_at(depth, &tris, f, s, proj.depth - eps) {
                return None;
            }
            Some(TexelVis {
                texel: t as u32,
                pixel: pixel as u32,
                similarity: sim.min(1.0) as f32,
                depth: proj.depth as f32,
            })
        })
        .collect();
    TexelVisMap {
        view_size: (w, h),
        atlas_size: atlas.dimensions(),
        entries,
    }
}

/// Everything the texturing loop needs from one rasterization.
#[derive(Debug, Clone)]
pub struct ViewRender {
    pub gbuffer: GBuffer,
    pub depth: DepthMap,
    pub similarity: SimilarityMap,
}

pub fn render_view(mesh: &Mesh, cams: &CameraMats) -> ViewRender {
    let gbuffer = rasterize(mesh, cams);
    let depth = DepthMap::from_gbuffer(&gbuffer);
    let similarity = similarity_from_gbuffer(mesh, cams, &gbuffer);
    ViewRender {
        gbuffer,
        depth,
        similarity,
    }
}
