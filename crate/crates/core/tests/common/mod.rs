#![allow(dead_code)]

use std::collections::HashSet;
use std::path::PathBuf;

use nalgebra::Vector3;
use tempfile::TempDir;
use ultraman_core::fixtures::{write_fixture, FixtureKind, FixturePaths};
use ultraman_core::pipeline::RunConfig;
use ultraman_core::render::{DepthMap, TexelVisMap, NO_FACE};
use ultraman_core::{CameraMats, Mesh, TextureAtlas};

/// A fixture directory that lives as long as the value.
pub struct Fixture {
    pub dir: TempDir,
    pub paths: FixturePaths,
    pub config: RunConfig,
}

impl Fixture {
    pub fn out(&self) -> PathBuf {
        self.config.output_dir.clone()
    }
}

pub fn fixture(kind: FixtureKind, tweak: impl FnOnce(&mut RunConfig)) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut base = RunConfig::default();
    tweak(&mut base);
    let paths = write_fixture(kind, dir.path(), &base).unwrap();
    let config = RunConfig::load(&paths.config).unwrap();
    Fixture { dir, paths, config }
}

/// Small resolutions for tests that only need the control flow.
pub fn small(cfg: &mut RunConfig) {
    cfg.render_resolution = 192;
    cfg.atlas_resolution = 256;
}

/// Two-sided Möller-Trumbore; returns the ray parameter.
pub fn ray_hit(orig: Vector3<f64>, dir: Vector3<f64>, tri: [Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

#[derive(Debug, Clone, Default)]
pub struct OracleStats {
    pub texels: usize,
    pub agree: usize,
    /// Listed by the implementation but occluded or out of view for the oracle.
    pub extra: usize,
    /// Seen by the oracle but missing from the map.
    pub missing: usize,
    /// Disagreements farther than one pixel from any depth discontinuity.
    pub unexplained: usize,
}

impl OracleStats {
    pub fn ratio(&self) -> f64 {
        self.agree as f64 / self.texels.max(1) as f64
    }

    pub fn add(&mut self, o: &OracleStats) {
        self.texels += o.texels;
        self.agree += o.agree;
        self.extra += o.extra;
        self.missing += o.missing;
        self.unexplained += o.unexplained;
    }
}

/// Casts a ray from the eye to every covered texel's surface point against
/// every triangle. A texel is visible when it lands in the frame, its triangle
/// faces the camera, and nothing is hit more than `eps` before it.
pub fn visibility_oracle(
    mesh: &Mesh,
    atlas: &TextureAtlas,
    cams: &CameraMats,
    depth: &DepthMap,
    vis: &TexelVisMap,
) -> OracleStats {
    let layout = atlas.layout();
    let eps = depth.depth_eps();
    let seen: HashSet<u32> = vis.entries.iter().map(|e| e.texel).collect();
    let (w, h) = (cams.width as i64, cams.height as i64);
    let mut stats = OracleStats::default();
    for t in layout.covered_texels() {
        stats.texels += 1;
        let (f, b) = layout.owner(t).unwrap();
        let face = mesh.faces[f as usize];
        let p: Vector3<f64> = (0..3).map(|k| mesh.vertices[face[k] as usize] * b[k] as f64).sum();
        let proj = cams.project(&p);
        let s = proj.screen;
        let in_frame = proj.depth > 0.0 && s.x >= 0.0 && s.y >= 0.0 && s.x < w as f64 && s.y < h as f64;
        let to_eye = cams.eye - p;
        let len = to_eye.norm();
        let dir = -to_eye / len;
        // Camera-axis tolerance mapped onto the ray.
        let tol = eps * len / proj.depth.max(1e-12);
        let facing = mesh.face_cross(f as usize).dot(&to_eye) > 0.0;
        let mut nearest = f64::INFINITY;
        if in_frame && facing {
            for g in 0..mesh.faces.len() {
                if g == f as usize {
                    continue;
                }
                if let Some(th) = ray_hit(cams.eye, dir, mesh.corners(g)) {
                    nearest = nearest.min(th);
                }
            }
        }
        let oracle = in_frame && facing && nearest >= len - tol;
        let ours = seen.contains(&(t as u32));
        if oracle == ours {
            stats.agree += 1;
            continue;
        }
        if ours {
            stats.extra += 1;
        } else {
            stats.missing += 1;
        }
        let (px, py) = (s.x.floor() as i64, s.y.floor() as i64);
        let mut near_edge = nearest.is_finite() && (len - nearest).abs() <= 2.0 * tol;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (px + dx, py + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    near_edge = true;
                    continue;
                }
                let i = (y * w + x) as usize;
                if depth.faces[i] == NO_FACE || (depth.values[i] as f64 - proj.depth).abs() > eps {
                    near_edge = true;
                }
            }
        }
        if !near_edge {
            stats.unexplained += 1;
        }
    }
    stats
}
