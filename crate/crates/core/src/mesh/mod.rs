//! Triangle meshes: ingestion, validation, normals, simplification, unwrapping
//! and vertex-color baking.

mod bake;
pub mod io;
mod matte;
mod simplify;
mod unwrap;

pub use bake::bake_vertex_colors;
pub use io::{load_mesh, write_obj, write_ply};
pub use matte::{apply_matte, InputImage};
pub use simplify::{simplify, SimplifyOutcome};
pub use unwrap::naive_unwrap;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::views::Aabb;

/// Faces with area below this (squared model units) are degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

const NORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: u64, count: usize },
    #[error("face {face} references vertex {index} more than once")]
    RepeatedIndex { face: usize, index: u32 },
    #[error("empty mesh")]
    Empty,
    #[error("unsupported mesh format: {0}")]
    Format(String),
    #[error("attribute {name} has {len} entries for {count} vertices")]
    AttributeLength { name: &'static str, len: usize, count: usize },
    #[error("normal {index} has length {length}")]
    NonUnitNormal { index: usize, length: f64 },
    #[error("uv {index} outside [0,1]^2")]
    UvOutOfRange { index: usize },
    #[error("mesh not unwrapped")]
    MissingUvs,
    #[error("mesh has no vertex colors")]
    MissingColors,
    #[error("empty foreground")]
    EmptyForeground,
    #[error("dimension mismatch: image {image:?}, mask {mask:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub uvs: Option<Vec<Vector2<f64>>>,
    /// Linear RGB in [0,1].
    pub vertex_colors: Option<Vec<Vector3<f64>>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Self {
        Self {
            vertices,
            faces,
            ..Default::default()
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn corners(&self, face: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), MeshError> {
        let count = self.vertices.len();
        if count == 0 || self.faces.is_empty() {
            return Err(MeshError::Empty);
        }
        for (fi, face) in self.faces.iter().enumerate() {
            for &i in face {
                if i as usize >= count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: i as u64,
                        count,
                    });
                }
            }
            if face[0] == face[1] || face[0] == face[2] {
                return Err(MeshError::RepeatedIndex { face: fi, index: face[0] });
            }
            if face[1] == face[2] {
                return Err(MeshError::RepeatedIndex { face: fi, index: face[1] });
            }
        }
        if let Some(normals) = &self.normals {
            check_len("normals", normals.len(), count)?;
            for (i, n) in normals.iter().enumerate() {
                let length = n.norm();
                if !((length - 1.0).abs() <= NORMAL_TOLERANCE) {
                    return Err(MeshError::NonUnitNormal { index: i, length });
                }
            }
        }
        if let Some(uvs) = &self.uvs {
            check_len("uvs", uvs.len(), count)?;
            for (i, uv) in uvs.iter().enumerate() {
                if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
                    return Err(MeshError::UvOutOfRange { index: i });
                }
            }
        }
        if let Some(colors) = &self.vertex_colors {
            check_len("vertex_colors", colors.len(), count)?;
        }
        Ok(())
    }

    /// Drops unreferenced vertices, keeping attribute arrays aligned.
    pub fn compact(&self) -> Mesh {
        let mut used = vec![false; self.vertices.len()];
        for face in &self.faces {
            for &i in face {
                used[i as usize] = true;
            }
        }
        // Survivors keep their relative order.
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut order = Vec::new();
        for (i, _) in used.iter().enumerate().filter(|(_, &u)| u) {
            remap[i] = order.len() as u32;
            order.push(i);
        }
        let pick3 = |v: &Vec<Vector3<f64>>| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Mesh {
            vertices: pick3(&self.vertices),
            faces: self
                .faces
                .iter()
                .map(|f| [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]])
                .collect(),
            normals: self.normals.as_ref().map(pick3),
            uvs: self
                .uvs
                .as_ref()
                .map(|uv| order.iter().map(|&i| uv[i]).collect()),
            vertex_colors: self.vertex_colors.as_ref().map(pick3),
        }
    }

    pub fn transformed(&self, rotation: &nalgebra::Matrix3<f64>, translation: &Vector3<f64>) -> Mesh {
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = rotation * *v + translation;
        }
        if let Some(normals) = &mut out.normals {
            for n in normals {
                *n = (rotation * *n).normalize();
            }
        }
        out
    }
}

fn check_len(name: &'static str, len: usize, count: usize) -> Result<(), MeshError> {
    if len != count {
        return Err(MeshError::AttributeLength { name, len, count });
    }
    Ok(())
}

/// Per-vertex normals as the normalized area-weighted sum of incident face
/// normals. Vertices with no usable incident face get +Z and a warning.
pub fn compute_normals(mesh: &Mesh) -> Result<(Mesh, Vec<String>), MeshError> {
    if mesh.faces.is_empty() {
        return Err(MeshError::Empty);
    }
    let mut accum = vec![Vector3::zeros(); mesh.vertices.len()];
    for fi in 0..mesh.faces.len() {
        // |cross| = 2 * area, so summing raw crosses is area weighting.
        let n = mesh.face_cross(fi);
        for &i in &mesh.faces[fi] {
            accum[i as usize] += n;
        }
    }
    let mut fallback = 0usize;
    let normals = accum
        .into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 1e-300 && len.is_finite() {
                n / len
            } else {
                fallback += 1;
                Vector3::z()
            }
        })
        .collect();
    let mut warnings = Vec::new();
    if fallback > 0 {
        warnings.push(format!(
            "{fallback} vertices without incident area; normal set to +Z"
        ));
    }
    let mut out = mesh.clone();
    out.normals = Some(normals);
    Ok((out, warnings))
}
