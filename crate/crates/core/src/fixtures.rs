//! Procedural meshes and synthetic inputs used by tests, benches and the
//! `fixture` CLI subcommand.

use std::path::{Path, PathBuf};

use image::{Rgba, RgbaImage};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{compute_normals, write_obj, Mesh, MeshError};
use crate::render::{rasterize, NO_FACE};
use crate::views::CameraMats;

/// Unit cube on [0,1]^3, 8 vertices and 12 outward triangles. Every face is
/// split along the diagonal joining corners of the even-parity tetrahedron.
pub fn unit_cube() -> Mesh {
    let vertices = (0..8)
        .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let faces = vec![
        [0, 3, 1],
        [0, 2, 3],
        [5, 6, 4],
        [5, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [3, 2, 6],
        [3, 6, 7],
        [0, 4, 6],
        [0, 6, 2],
        [3, 5, 1],
        [3, 7, 5],
    ];
    Mesh::new(vertices, faces)
}

/// Latitude-longitude sphere with poles on ±Z: `segments * (rings - 1) + 2`
/// vertices and `2 * segments * (rings - 1)` outward faces.
pub fn uv_sphere(segments: u32, rings: u32, radius: f64) -> Mesh {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = vec![Vector3::new(0.0, 0.0, radius)];
    for k in 1..rings {
        let theta = std::f64::consts::PI * k as f64 / rings as f64;
        for j in 0..segments {
            let phi = std::f64::consts::TAU * j as f64 / segments as f64;
            vertices.push(radius * Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    vertices.push(Vector3::new(0.0, 0.0, -radius));
    let bottom = vertices.len() as u32 - 1;
    let ring = |k: u32, j: u32| 1 + (k - 1) * segments + j % segments;
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for k in 1..rings - 1 {
        for j in 0..segments {
            let (a, b, c, d) = (ring(k, j), ring(k + 1, j), ring(k + 1, j + 1), ring(k, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for j in 0..segments {
        faces.push([bottom, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    orient_outward(Mesh::new(vertices, faces))
}

/// Flips faces whose normal points toward the centroid of the vertex set.
fn orient_outward(mut mesh: Mesh) -> Mesh {
    let c = mesh.vertices.iter().sum::<Vector3<f64>>() / mesh.vertices.len() as f64;
    for fi in 0..mesh.faces.len() {
        let [a, b, cc] = mesh.corners(fi);
        let centroid = (a + b + cc) / 3.0;
        if mesh.face_cross(fi).dot(&(centroid - c)) < 0.0 {
            mesh.faces[fi].swap(1, 2);
        }
    }
    mesh
}

/// Flat `nx x ny` grid on [0,1]^2 at z = 0, facing +Z.
pub fn grid_patch(nx: u32, ny: u32) -> Mesh {
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vector3::new(i as f64 / nx as f64, j as f64 / ny as f64, 0.0));
        }
    }
    let id = |i: u32, j: u32| j * (nx + 1) + i;
    let mut faces = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::new(vertices, faces)
}

/// Sphere of random resolution with radial noise, colors, uvs and normals.
pub fn perturbed_sphere(seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = rng.gen_range(6..20);
    let rings = rng.gen_range(4..12);
    let mut mesh = uv_sphere(segments, rings, 1.0);
    for v in &mut mesh.vertices {
        *v *= 1.0 + rng.gen_range(-0.1..0.1);
    }
    let n = mesh.vertex_count();
    mesh.vertex_colors = Some((0..n).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect());
    mesh.uvs = Some((0..n).map(|_| Vector2::new(rng.gen(), rng.gen())).collect());
    compute_normals(&mesh).unwrap().0
}

/// `count` independent random triangles in [-1,1]^3, each with its own
/// vertices and a face normal.
pub fn random_soup(count: usize, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = Mesh::default();
    while mesh.faces.len() < count {
        let c = Vector3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
        let corners: Vec<Vector3<f64>> = (0..3)
            .map(|_| c + Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
            .collect();
        if (corners[1] - corners[0]).cross(&(corners[2] - corners[0])).norm() < 1e-3 {
            continue;
        }
        let base = mesh.vertices.len() as u32;
        mesh.vertices.extend(corners);
        mesh.faces.push([base, base + 1, base + 2]);
    }
    compute_normals(&mesh).unwrap().0
}

fn ellipsoid(center: Vector3<f64>, radii: Vector3<f64>, segments: u32, rings: u32) -> Mesh {
    let mut m = uv_sphere(segments, rings, 1.0);
    for v in &mut m.vertices {
        *v = center + v.component_mul(&radii);
    }
    m
}

fn merge(parts: &[Mesh]) -> Mesh {
    let mut out = Mesh::default();
    let mut colors = Vec::new();
    for p in parts {
        let base = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&p.vertices);
        out.faces.extend(p.faces.iter().map(|f| f.map(|i| i + base)));
        colors.extend(p.vertex_colors.clone().unwrap_or_else(|| vec![Vector3::repeat(0.5); p.vertex_count()]));
    }
    out.vertex_colors = Some(colors);
    out
}

/// T-posed figure of six disjoint ellipsoids (head, torso, arms, legs), about
/// 1.7 units tall, facing -Y, with smooth ground-truth vertex colors.
pub fn humanoid() -> Mesh {
    let skin = |p: &Vector3<f64>| Vector3::new(0.88, 0.70 + 0.05 * p.z.sin(), 0.58);
    let shirt = |p: &Vector3<f64>| Vector3::new(0.20 + 0.3 * (p.z - 0.85), 0.35 + 0.2 * p.x, 0.75);
    let pants = |p: &Vector3<f64>| Vector3::new(0.25, 0.22 + 0.1 * p.z, 0.18 + 0.15 * p.x.abs());
    let part = |c: [f64; 3], r: [f64; 3], paint: &dyn Fn(&Vector3<f64>) -> Vector3<f64>| {
        let mut m = ellipsoid(Vector3::from(c), Vector3::from(r), 16, 10);
        m.vertex_colors = Some(m.vertices.iter().map(paint).collect());
        m
    };
    let mesh = merge(&[
        part([0.0, 0.0, 1.60], [0.11, 0.12, 0.13], &skin),
        part([0.0, 0.0, 1.15], [0.20, 0.12, 0.30], &shirt),
        part([0.50, 0.0, 1.36], [0.27, 0.06, 0.06], &skin),
        part([-0.50, 0.0, 1.36], [0.27, 0.06, 0.06], &skin),
        part([0.14, 0.0, 0.42], [0.08, 0.08, 0.41], &pants),
        part([-0.14, 0.0, 0.42], [0.08, 0.08, 0.41], &pants),
    ]);
    compute_normals(&mesh).unwrap().0
}

/// Unit sphere with smooth vertex colors: 32 segments, 16 rings, 960 faces.
pub fn sphere() -> Mesh {
    let mut mesh = uv_sphere(32, 16, 1.0);
    let colors = mesh
        .vertices
        .iter()
        .map(|v| Vector3::new(0.55 + 0.35 * v.x, 0.5 + 0.3 * v.z, 0.45 - 0.25 * v.y))
        .collect();
    mesh.vertex_colors = Some(colors);
    compute_normals(&mesh).unwrap().0
}

/// Fine sphere of about `faces` triangles, for throughput tests.
pub fn dense_sphere(faces: usize) -> Mesh {
    let rings = ((faces as f64 / 4.0).sqrt()).round().max(2.0) as u32;
    let mut mesh = uv_sphere(rings * 2, rings + 1, 1.0);
    let colors = mesh.vertices.iter().map(|v| v.map(|x| 0.5 + 0.4 * x)).collect();
    mesh.vertex_colors = Some(colors);
    compute_normals(&mesh).unwrap().0
}

/// Interpolates vertex colors directly per pixel, standing in for a
/// photograph of the ground-truth subject. Alpha is the silhouette.
pub fn render_vertex_colors(mesh: &Mesh, cams: &CameraMats) -> RgbaImage {
    let gb = rasterize(mesh, cams);
    let colors = mesh.vertex_colors.as_ref().expect("fixture mesh has colors");
    RgbaImage::from_fn(cams.width, cams.height, |x, y| {
        let i = (y * cams.width + x) as usize;
        let f = gb.face[i];
        if f == NO_FACE {
            return Rgba([0, 0, 0, 0]);
        }
        let face = mesh.faces[f as usize];
        let b = gb.bary[i];
        let c = (0..3).fold(Vector3::zeros(), |acc, k| acc + colors[face[k] as usize] * b[k] as f64);
        let rgb = [0, 1, 2].map(|k| (c[k].clamp(0.0, 1.0) * 255.0).round() as u8);
        Rgba([rgb[0], rgb[1], rgb[2], 255])
    })
}

pub fn sample_answers() -> serde_json::Value {
    serde_json::json!({
        "clothing_style": "fitted long-sleeve shirt and straight trousers",
        "clothing_colors": "blue shirt, dark brown trousers",
        "facial_features": "oval face, light skin",
        "hairstyle": "short black hair",
        "accessories": "no accessories",
        "gender_age": "young adult",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Sphere,
    Humanoid,
    Dense,
}

impl FixtureKind {
    pub fn mesh(self) -> Mesh {
        match self {
            FixtureKind::Sphere => sphere(),
            FixtureKind::Humanoid => humanoid(),
            FixtureKind::Dense => dense_sphere(20_000),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub dir: PathBuf,
    pub mesh: PathBuf,
    pub front: PathBuf,
    pub answers: PathBuf,
    pub config: PathBuf,
}

/// Writes a complete run directory: uncolored `mesh.obj`, a ground-truth
/// front photograph `front.png`, `answers.json`, and `run.json` pointing at
/// them with output under `out/`.
pub fn write_fixture(
    kind: FixtureKind,
    dir: &Path,
    config: &crate::pipeline::RunConfig,
) -> Result<FixturePaths, crate::pipeline::PipelineError> {
    use crate::pipeline::PipelineError;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let dir = &dir.canonicalize().map_err(|e| PipelineError::io(dir, e))?;
    let gt = kind.mesh();
    let mut plain = gt.clone();
    plain.vertex_colors = None;
    let mesh_path = dir.join("mesh.obj");
    write_obj(&plain, &mesh_path, None).map_err(PipelineError::Mesh)?;

    let cams = crate::pipeline::camera_for(&gt, config, 1)?;
    let front = render_vertex_colors(&gt, &cams);
    let front_path = dir.join("front.png");
    front
        .save(&front_path)
        .map_err(|e| PipelineError::Mesh(MeshError::Image(e)))?;

    let answers_path = dir.join("answers.json");
    std::fs::write(&answers_path, serde_json::to_vec_pretty(&sample_answers()).unwrap())
        .map_err(|e| PipelineError::io(&answers_path, e))?;

    let mut cfg = config.clone();
    cfg.mesh = mesh_path.clone();
    cfg.front_image = front_path.clone();
    cfg.answers = answers_path.clone();
    cfg.output_dir = dir.join("out");
    let config_path = dir.join("run.json");
    std::fs::write(&config_path, serde_json::to_vec_pretty(&cfg).unwrap())
        .map_err(|e| PipelineError::io(&config_path, e))?;
    Ok(FixturePaths {
        dir: dir.to_path_buf(),
        mesh: mesh_path,
        front: front_path,
        answers: answers_path,
        config: config_path,
    })
}
