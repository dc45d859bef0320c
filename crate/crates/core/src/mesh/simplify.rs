//! Quadric error metric edge collapse.
//!
//! Plane quadrics are area weighted. Open boundary edges receive an extra
//! perpendicular plane quadric weighted by `1e3 * mean_edge_length^2`, which pins
//! boundaries in place. Vertex colors and uvs are interpolated along the
//! collapsed edge at the projection of the optimal point.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector4};

use super::{compute_normals, Mesh, DEGENERATE_AREA};

const BOUNDARY_WEIGHT: f64 = 1e3;
const MIN_TARGET: usize = 4;
/// Minimum cosine between a face normal before and after a collapse.
const FLIP_COS: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SimplifyOutcome {
    pub mesh: Mesh,
    /// Set when the target could not be met or was below the minimum.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
    stamp_a: u32,
    stamp_b: u32,
    position: Vector3<f64>,
    t: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Min-heap on cost; ties broken by vertex ids for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

struct State {
    positions: Vec<Vector3<f64>>,
    colors: Option<Vec<Vector3<f64>>>,
    uvs: Option<Vec<Vector2<f64>>>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    incident: Vec<Vec<u32>>,
    quadrics: Vec<Matrix4<f64>>,
    stamps: Vec<u32>,
    vertex_alive: Vec<bool>,
    alive_faces: usize,
}

fn plane_quadric(normal: Vector3<f64>, point: Vector3<f64>, weight: f64) -> Matrix4<f64> {
    let p = Vector4::new(normal.x, normal.y, normal.z, -normal.dot(&point));
    p * p.transpose() * weight
}

fn quadric_error(q: &Matrix4<f64>, v: &Vector3<f64>) -> f64 {
    let h = Vector4::new(v.x, v.y, v.z, 1.0);
    (h.transpose() * q * h)[0].max(0.0)
}

impl State {
    fn new(mesh: &Mesh) -> Self {
        let faces: Vec<[u32; 3]> = (0..mesh.faces.len())
            .filter(|&f| mesh.face_area(f) >= DEGENERATE_AREA)
            .map(|f| mesh.faces[f])
            .collect();
        let n = mesh.vertices.len();
        let mut incident = vec![Vec::new(); n];
        let mut quadrics = vec![Matrix4::zeros(); n];
        let mut edge_faces: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
        let mut edge_len_sum = 0.0;
        let mut edge_count = 0usize;
        for (fi, f) in faces.iter().enumerate() {
            let p = [0, 1, 2].map(|k| mesh.vertices[f[k] as usize]);
            let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let area = 0.5 * cross.norm();
            let q = plane_quadric(cross.normalize(), p[0], area);
            for k in 0..3 {
                incident[f[k] as usize].push(fi as u32);
                quadrics[f[k] as usize] += q;
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = edge_faces.entry(key).or_insert_with(|| {
                    edge_len_sum += (p[(k + 1) % 3] - p[k]).norm();
                    edge_count += 1;
                    (fi as u32, 0)
                });
                e.1 += 1;
            }
        }
        let mean_edge = if edge_count > 0 { edge_len_sum / edge_count as f64 } else { 0.0 };
        let penalty = BOUNDARY_WEIGHT * mean_edge * mean_edge;
        let mut boundary: Vec<_> = edge_faces
            .iter()
            .filter(|(_, &(_, count))| count == 1)
            .map(|(&k, &(f, _))| (k, f))
            .collect();
        // HashMap order is not deterministic; float sums must be.
        boundary.sort_unstable();
        for ((a, b), f) in boundary {
            let pa = mesh.vertices[a as usize];
            let pb = mesh.vertices[b as usize];
            let f = faces[f as usize];
            let fp = [0, 1, 2].map(|k| mesh.vertices[f[k] as usize]);
            let face_n = (fp[1] - fp[0]).cross(&(fp[2] - fp[0])).normalize();
            let n = (pb - pa).cross(&face_n);
            if n.norm() < 1e-300 {
                continue;
            }
            let q = plane_quadric(n.normalize(), pa, penalty);
            quadrics[a as usize] += q;
            quadrics[b as usize] += q;
        }
        let vertex_alive = incident.iter().map(|f| !f.is_empty()).collect();
        Self {
            positions: mesh.vertices.clone(),
            colors: mesh.vertex_colors.clone(),
            uvs: mesh.uvs.clone(),
            alive_faces: faces.len(),
            face_alive: vec![true; faces.len()],
            faces,
            incident,
            quadrics,
            stamps: vec![0; n],
            vertex_alive,
        }
    }

    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self.incident[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn is_boundary_edge(&self, a: u32, b: u32) -> bool {
        self.incident[a as usize]
            .iter()
            .filter(|&&f| self.faces[f as usize].contains(&b))
            .count()
            == 1
    }

    fn is_boundary_vertex(&self, v: u32) -> bool {
        self.neighbors(v).into_iter().any(|u| self.is_boundary_edge(v, u))
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let q = self.quadrics[a as usize] + self.quadrics[b as usize];
        let pa = self.positions[a as usize];
        let pb = self.positions[b as usize];
        let edge = pb - pa;
        let mid = (pa + pb) * 0.5;
        let m = Matrix3::new(
            q[(0, 0)], q[(0, 1)], q[(0, 2)],
            q[(1, 0)], q[(1, 1)], q[(1, 2)],
            q[(2, 0)], q[(2, 1)], q[(2, 2)],
        );
        let rhs = -Vector3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]);
        let scale = m.norm().max(1e-300);
        let mut best: Option<(f64, Vector3<f64>)> = None;
        if m.determinant().abs() > 1e-12 * scale * scale * scale {
            if let Some(x) = m.lu().solve(&rhs) {
                // Reject solutions that drift far off the edge.
                if (x - mid).norm() <= edge.norm().max(1e-12) {
                    best = Some((quadric_error(&q, &x), x));
                }
            }
        }
        if best.is_none() {
            for p in [pa, pb, mid] {
                let e = quadric_error(&q, &p);
                if best.map_or(true, |(c, _)| e < c) {
                    best = Some((e, p));
                }
            }
        }
        let (cost, position) = best.unwrap();
        let len2 = edge.norm_squared();
        let t = if len2 > 0.0 {
            ((position - pa).dot(&edge) / len2).clamp(0.0, 1.0)
        } else {
            0.5
        };
        Candidate {
            cost,
            a,
            b,
            stamp_a: self.stamps[a as usize],
            stamp_b: self.stamps[b as usize],
            position,
            t,
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.vertex_alive[c.a as usize]
            && self.vertex_alive[c.b as usize]
            && self.stamps[c.a as usize] == c.stamp_a
            && self.stamps[c.b as usize] == c.stamp_b
    }

    fn collapse_is_valid(&self, c: &Candidate) -> bool {
        let (a, b) = (c.a, c.b);
        let shared: Vec<u32> = self.incident[a as usize]
            .iter()
            .copied()
            .filter(|&f| self.faces[f as usize].contains(&b))
            .collect();
        if shared.is_empty() {
            return false;
        }
        // Link condition: common neighbours are exactly the apexes of the
        // faces spanning the edge.
        let mut apexes: Vec<u32> = shared
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&v| v != a && v != b)
            .collect();
        apexes.sort_unstable();
        apexes.dedup();
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<u32> = na.iter().copied().filter(|v| nb.binary_search(v).is_ok()).collect();
        if common != apexes {
            return false;
        }
        if shared.len() > 1 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        for &v in &[a, b] {
            for &f in &self.incident[v as usize] {
                if shared.contains(&f) {
                    continue;
                }
                let face = self.faces[f as usize];
                let old = face.map(|i| self.positions[i as usize]);
                let new = face.map(|i| {
                    if i == a || i == b {
                        c.position
                    } else {
                        self.positions[i as usize]
                    }
                });
                let n_old = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n_new = (new[1] - new[0]).cross(&(new[2] - new[0]));
                if 0.5 * n_new.norm() < DEGENERATE_AREA {
                    return false;
                }
                if n_old.normalize().dot(&n_new.normalize()) < FLIP_COS {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, c: &Candidate) {
        let (a, b) = (c.a as usize, c.b as usize);
        self.positions[a] = c.position;
        if let Some(colors) = &mut self.colors {
            colors[a] = colors[a] * (1.0 - c.t) + colors[b] * c.t;
        }
        if let Some(uvs) = &mut self.uvs {
            let uv = uvs[a] * (1.0 - c.t) + uvs[b] * c.t;
            uvs[a] = uv.map(|x| x.clamp(0.0, 1.0));
        }
        let qb = self.quadrics[b];
        self.quadrics[a] += qb;
        let b_faces = std::mem::take(&mut self.incident[b]);
        for f in b_faces {
            let fu = f as usize;
            if !self.face_alive[fu] {
                continue;
            }
            if self.faces[fu].contains(&c.a) {
                self.face_alive[fu] = false;
                self.alive_faces -= 1;
                for &v in &self.faces[fu] {
                    if v != c.b {
                        self.incident[v as usize].retain(|&g| g != f);
                    }
                }
            } else {
                for v in &mut self.faces[fu] {
                    if *v == c.b {
                        *v = c.a;
                    }
                }
                self.incident[a].push(f);
            }
        }
        self.incident[a].sort_unstable();
        self.vertex_alive[b] = false;
        self.stamps[a] += 1;
        self.stamps[b] += 1;
    }
}

/// Collapses edges in order of increasing quadric error until at most
/// `target_faces` faces remain or no valid collapse is left.
pub fn simplify(mesh: &Mesh, target_faces: usize) -> SimplifyOutcome {
    let mut warning = None;
    let target = if target_faces < MIN_TARGET {
        warning = Some(format!(
            "target {target_faces} below minimum {MIN_TARGET}; simplifying to {MIN_TARGET}"
        ));
        MIN_TARGET
    } else {
        target_faces
    };

    let mut state = State::new(mesh);
    if state.alive_faces > target {
        let mut heap = BinaryHeap::new();
        let mut seen = std::collections::HashSet::new();
        for f in &state.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if seen.insert((a.min(b), a.max(b))) {
                    heap.push(state.candidate(a, b));
                }
            }
        }
        while state.alive_faces > target {
            let Some(c) = heap.pop() else { break };
            if !state.is_current(&c) || !state.collapse_is_valid(&c) {
                continue;
            }
            state.collapse(&c);
            for v in state.neighbors(c.a) {
                heap.push(state.candidate(c.a, v));
            }
        }
        if state.alive_faces > target && warning.is_none() {
            warning = Some(format!(
                "no valid collapse left at {} faces (target {target})",
                state.alive_faces
            ));
        }
    }

    let faces: Vec<[u32; 3]> = state
        .faces
        .iter()
        .zip(&state.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| *f)
        .collect();
    let mut out = Mesh {
        vertices: state.positions,
        faces,
        normals: None,
        uvs: state.uvs,
        vertex_colors: state.colors,
    };
    let keep: Vec<[u32; 3]> = (0..out.faces.len())
        .filter(|&f| out.face_area(f) >= DEGENERATE_AREA)
        .map(|f| out.faces[f])
        .collect();
    out.faces = keep;
    let mut out = out.compact();
    if mesh.normals.is_some() && !out.faces.is_empty() {
        out = compute_normals(&out).map(|(m, _)| m).unwrap_or(out);
    }
    SimplifyOutcome { mesh: out, warning }
}
