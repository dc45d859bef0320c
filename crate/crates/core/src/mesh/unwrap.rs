use nalgebra::Vector2;

use super::Mesh;

/// Gap (in texels) kept around every chart.
const PADDING_TEXELS: f64 = 1.5;

/// Fallback unwrap: every pair of faces gets one square grid cell, split along
/// its anti-diagonal into two right-triangle charts. Vertices are duplicated
/// per face corner so the result always carries per-vertex uvs.
pub fn naive_unwrap(mesh: &Mesh, atlas_resolution: u32) -> Mesh {
    let cells = mesh.faces.len().div_ceil(2).max(1);
    let grid = (cells as f64).sqrt().ceil() as usize;
    let cell = 1.0 / grid as f64;
    let pad = (PADDING_TEXELS / atlas_resolution.max(1) as f64).min(cell * 0.1);

    let mut out = Mesh::default();
    let corners = mesh.faces.len() * 3;
    out.vertices.reserve(corners);
    let mut uvs = Vec::with_capacity(corners);
    let mut normals = mesh.normals.as_ref().map(|_| Vec::with_capacity(corners));
    let mut colors = mesh.vertex_colors.as_ref().map(|_| Vec::with_capacity(corners));

    for (fi, face) in mesh.faces.iter().enumerate() {
        let c = fi / 2;
        let (col, row) = ((c % grid) as f64, (c / grid) as f64);
        let (u0, v0) = (col * cell, row * cell);
        let local: [(f64, f64); 3] = if fi % 2 == 0 {
            [(pad, pad), (cell - 2.0 * pad, pad), (pad, cell - 2.0 * pad)]
        } else {
            [(cell - pad, 2.0 * pad), (cell - pad, cell - pad), (2.0 * pad, cell - pad)]
        };
        for (k, &vi) in face.iter().enumerate() {
            let vi = vi as usize;
            out.vertices.push(mesh.vertices[vi]);
            uvs.push(Vector2::new(
                (u0 + local[k].0).clamp(0.0, 1.0),
                (v0 + local[k].1).clamp(0.0, 1.0),
            ));
            if let (Some(dst), Some(src)) = (&mut normals, &mesh.normals) {
                dst.push(src[vi]);
            }
            if let (Some(dst), Some(src)) = (&mut colors, &mesh.vertex_colors) {
                dst.push(src[vi]);
            }
        }
        let base = fi as u32 * 3;
        out.faces.push([base, base + 1, base + 2]);
    }
    out.uvs = Some(uvs);
    out.normals = normals;
    out.vertex_colors = colors;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::render::UvLayout;

    #[test]
    fn every_face_gets_its_own_chart() {
        let sphere = fixtures::uv_sphere(16, 8, 1.0);
        let mesh = naive_unwrap(&sphere, 512);
        mesh.validate().unwrap();
        assert_eq!(mesh.face_count(), sphere.face_count());
        let layout = UvLayout::build(&mesh, 512, 512).unwrap();
        let mut per_face = vec![0usize; mesh.face_count()];
        for t in layout.covered_texels() {
            per_face[layout.owner(t).unwrap().0 as usize] += 1;
        }
        assert!(per_face.iter().all(|&n| n > 0), "a face received no texels");
    }

    #[test]
    fn charts_do_not_overlap() {
        let mesh = naive_unwrap(&fixtures::uv_sphere(9, 5, 1.0), 256);
        let uvs = mesh.uvs.as_ref().unwrap();
        // Centroids of each chart must lie only inside their own triangle.
        for (fi, f) in mesh.faces.iter().enumerate() {
            let c = f.iter().fold(Vector2::zeros(), |a, &i| a + uvs[i as usize]) / 3.0;
            for (gi, g) in mesh.faces.iter().enumerate() {
                if gi == fi {
                    continue;
                }
                let q = g.map(|i| uvs[i as usize]);
                let s = |a: Vector2<f64>, b: Vector2<f64>| (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                let d = [s(q[0], q[1]), s(q[1], q[2]), s(q[2], q[0])];
                assert!(!(d.iter().all(|&v| v > 0.0) || d.iter().all(|&v| v < 0.0)));
            }
        }
    }
}
