use nalgebra::Vector2;

use crate::mesh::{Mesh, MeshError};

const NO_FACE: u32 = u32::MAX;
/// How far (in texels) a sample may be redirected to a texel of its own face.
const SEARCH_RADIUS: i64 = 2;

/// Continuous texel coordinates of a uv; v = 1 is the top row.
#[inline]
pub fn uv_to_texel(uv: Vector2<f64>, width: u32, height: u32) -> Vector2<f64> {
    Vector2::new(uv.x * width as f64, (1.0 - uv.y) * height as f64)
}

/// Which face (and where on it) every atlas texel center lands.
///
/// A texel is covered when its center lies inside a uv triangle; the first
/// face in index order wins overlaps.
#[derive(Debug, Clone)]
pub struct UvLayout {
    width: u32,
    height: u32,
    face: Vec<u32>,
    bary: Vec<[f32; 3]>,
    covered: usize,
}

impl UvLayout {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            face: vec![NO_FACE; n],
            bary: vec![[0.0; 3]; n],
            covered: 0,
        }
    }

    pub fn build(mesh: &Mesh, width: u32, height: u32) -> Result<Self, MeshError> {
        let uvs = mesh.uvs.as_ref().ok_or(MeshError::MissingUvs)?;
        let mut layout = Self::empty(width, height);
        for (fi, f) in mesh.faces.iter().enumerate() {
            let t = f.map(|i| uv_to_texel(uvs[i as usize], width, height));
            let area = edge(t[0], t[1], t[2]);
            if area.abs() < 1e-18 {
                continue;
            }
            let min_x = t.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let max_x = t.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let min_y = t.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let max_y = t.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            let x0 = (min_x - 0.5).ceil().max(0.0) as u32;
            let y0 = (min_y - 0.5).ceil().max(0.0) as u32;
            let x1 = ((max_x - 0.5).floor() as i64).min(width as i64 - 1);
            let y1 = ((max_y - 0.5).floor() as i64).min(height as i64 - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            for y in y0..=y1 as u32 {
                for x in x0..=x1 as u32 {
                    let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    if let Some(b) = barycentric_inside(t, area, p) {
                        let i = y as usize * width as usize + x as usize;
                        if layout.face[i] == NO_FACE {
                            layout.face[i] = fi as u32;
                            layout.bary[i] = b.map(|w| w as f32);
                            layout.covered += 1;
                        }
                    }
                }
            }
        }
        Ok(layout)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.face.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face.is_empty()
    }

    pub fn covered_count(&self) -> usize {
        self.covered
    }

    #[inline]
    pub fn is_covered(&self, texel: usize) -> bool {
        self.face[texel] != NO_FACE
    }

    /// Owning face and barycentric weights of a covered texel.
    #[inline]
    pub fn owner(&self, texel: usize) -> Option<(u32, [f32; 3])> {
        let f = self.face[texel];
        (f != NO_FACE).then(|| (f, self.bary[texel]))
    }

    pub fn covered_texels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.face.len()).filter(|&i| self.face[i] != NO_FACE)
    }

    /// Nearest texel owned by `face` around a uv sample, falling back to the
    /// texel under the sample. `None` only when the sample is off the atlas.
    pub fn locate(&self, face: u32, uv: Vector2<f64>) -> Option<usize> {
        let t = uv_to_texel(uv, self.width, self.height);
        let cx = t.x.floor() as i64;
        let cy = t.y.floor() as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        let direct = (cx >= 0 && cy >= 0 && cx < w && cy < h).then(|| (cy * w + cx) as usize);
        if let Some(i) = direct {
            if self.face[i] == face {
                return Some(i);
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for dy in -SEARCH_RADIUS..=SEARCH_RADIUS {
            for dx in -SEARCH_RADIUS..=SEARCH_RADIUS {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let i = (y * w + x) as usize;
                if self.face[i] != face {
                    continue;
                }
                let d = (x as f64 + 0.5 - t.x).powi(2) + (y as f64 + 0.5 - t.y).powi(2);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| i).or(direct)
    }
}

#[inline]
fn edge(a: Vector2<f64>, b: Vector2<f64>, p: Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

#[inline]
fn barycentric_inside(t: [Vector2<f64>; 3], area: f64, p: Vector2<f64>) -> Option<[f64; 3]> {
    let w0 = edge(t[1], t[2], p) / area;
    let w1 = edge(t[2], t[0], p) / area;
    let w2 = edge(t[0], t[1], p) / area;
    (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then_some([w0, w1, w2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mesh::naive_unwrap;

    /// Independent point-in-triangle test via same-side signs.
    fn brute_covered(mesh: &Mesh, w: u32, h: u32, x: u32, y: u32) -> bool {
        let uvs = mesh.uvs.as_ref().unwrap();
        let p = ((x as f64 + 0.5) / w as f64, 1.0 - (y as f64 + 0.5) / h as f64);
        mesh.faces.iter().any(|f| {
            let q = f.map(|i| (uvs[i as usize].x, uvs[i as usize].y));
            let s = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            let d = [s(q[0], q[1]), s(q[1], q[2]), s(q[2], q[0])];
            d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
        })
    }

    #[test]
    fn coverage_matches_point_in_triangle_oracle() {
        let mesh = naive_unwrap(&fixtures::uv_sphere(10, 6, 1.0), 128);
        let layout = UvLayout::build(&mesh, 128, 128).unwrap();
        let mut agree = 0usize;
        for y in 0..128 {
            for x in 0..128 {
                let i = (y * 128 + x) as usize;
                if layout.is_covered(i) == brute_covered(&mesh, 128, 128, x, y) {
                    agree += 1;
                }
            }
        }
        let frac = agree as f64 / (128.0 * 128.0);
        assert!(frac >= 0.999, "agreement {frac}");
        assert!(layout.covered_count() > 0);
    }

    #[test]
    fn barycentrics_reconstruct_uv() {
        let mesh = naive_unwrap(&fixtures::uv_sphere(6, 4, 1.0), 64);
        let layout = UvLayout::build(&mesh, 64, 64).unwrap();
        let uvs = mesh.uvs.as_ref().unwrap();
        for i in layout.covered_texels() {
            let (f, b) = layout.owner(i).unwrap();
            let face = mesh.faces[f as usize];
            let uv = (0..3).fold(Vector2::zeros(), |acc, k| acc + uvs[face[k] as usize] * b[k] as f64);
            let t = uv_to_texel(uv, 64, 64);
            let (x, y) = (i % 64, i / 64);
            assert!((t.x - (x as f64 + 0.5)).abs() < 1e-4);
            assert!((t.y - (y as f64 + 0.5)).abs() < 1e-4);
        }
    }

    #[test]
    fn missing_uvs_is_an_error() {
        assert!(matches!(
            UvLayout::build(&fixtures::unit_cube(), 8, 8),
            Err(MeshError::MissingUvs)
        ));
    }
}
