//! Wavefront OBJ and binary little-endian PLY.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::{Mesh, MeshError};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let path = path.as_ref();
    let io_err = |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let mesh = match ext.as_deref() {
        Some("obj") => parse_obj(reader)?,
        Some("ply") => parse_ply(&mut reader)?,
        _ => {
            // Sniff the magic instead of trusting the extension.
            let mut head = [0u8; 3];
            reader.read_exact(&mut head).map_err(io_err)?;
            let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
            if &head == b"ply" {
                parse_ply(&mut reader)?
            } else {
                parse_obj(reader)?
            }
        }
    };
    mesh.validate()?;
    Ok(mesh)
}

#[derive(Default)]
struct ObjCorner {
    v: i64,
    vt: Option<i64>,
    vn: Option<i64>,
}

fn parse_obj(reader: impl BufRead) -> Result<Mesh, MeshError> {
    let mut positions = Vec::new();
    let mut colors: Vec<Vector3<f64>> = Vec::new();
    let mut texcoords = Vec::new();
    let mut normals = Vec::new();
    let mut polygons: Vec<(usize, Vec<ObjCorner>)> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MeshError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let parse_err = |message: String| MeshError::Parse {
            line: lineno + 1,
            message,
        };
        let floats = |tokens: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>, MeshError> {
            tokens
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
                .collect()
        };
        match tag {
            "v" => {
                let vals = floats(tokens)?;
                if vals.len() < 3 {
                    return Err(parse_err("vertex needs 3 coordinates".into()));
                }
                positions.push(Vector3::new(vals[0], vals[1], vals[2]));
                if vals.len() >= 6 {
                    colors.push(Vector3::new(vals[3], vals[4], vals[5]));
                }
            }
            "vt" => {
                let vals = floats(tokens)?;
                if vals.len() < 2 {
                    return Err(parse_err("texture coordinate needs 2 values".into()));
                }
                texcoords.push(Vector2::new(vals[0], vals[1]));
            }
            "vn" => {
                let vals = floats(tokens)?;
                if vals.len() < 3 {
                    return Err(parse_err("normal needs 3 values".into()));
                }
                normals.push(Vector3::new(vals[0], vals[1], vals[2]));
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in tokens {
                    let mut parts = tok.split('/');
                    let num = |s: Option<&str>| -> Result<Option<i64>, MeshError> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => s
                                .parse::<i64>()
                                .map(Some)
                                .map_err(|e| parse_err(format!("{tok:?}: {e}"))),
                        }
                    };
                    let v = num(parts.next())?
                        .ok_or_else(|| parse_err(format!("face corner {tok:?} lacks a vertex")))?;
                    corners.push(ObjCorner {
                        v,
                        vt: num(parts.next())?,
                        vn: num(parts.next())?,
                    });
                }
                if corners.len() < 3 {
                    return Err(parse_err("face needs at least 3 corners".into()));
                }
                polygons.push((lineno + 1, corners));
            }
            _ => {}
        }
    }

    if positions.is_empty() || polygons.is_empty() {
        return Err(MeshError::Empty);
    }
    let has_colors = colors.len() == positions.len();
    let all = |f: &dyn Fn(&ObjCorner) -> bool| polygons.iter().all(|(_, c)| c.iter().all(f));
    let use_vt = !texcoords.is_empty() && all(&|c| c.vt.is_some());
    let use_vn = !normals.is_empty() && all(&|c| c.vn.is_some());

    // OBJ indices are 1-based; negative values count back from the end.
    let resolve = |idx: i64, count: usize, face: usize| -> Result<usize, MeshError> {
        let r = if idx > 0 { idx - 1 } else { count as i64 + idx };
        if r < 0 || r as usize >= count {
            return Err(MeshError::IndexOutOfRange {
                face,
                index: idx.unsigned_abs(),
                count,
            });
        }
        Ok(r as usize)
    };

    let mut mesh = Mesh::default();
    let mut faces = Vec::new();
    if !use_vt && !use_vn {
        mesh.vertices = positions.clone();
        if has_colors {
            mesh.vertex_colors = Some(colors.iter().map(|c| normalize_color(*c)).collect());
        }
        for (line, corners) in &polygons {
            let idx = corners
                .iter()
                .map(|c| resolve(c.v, positions.len(), *line).map(|i| i as u32))
                .collect::<Result<Vec<_>, _>>()?;
            fan(&idx, &mut faces);
        }
    } else {
        let mut uvs = Vec::new();
        let mut vns = Vec::new();
        let mut vcs = Vec::new();
        let mut lookup: HashMap<(usize, usize, usize), u32> = HashMap::new();
        for (line, corners) in &polygons {
            let mut idx = Vec::with_capacity(corners.len());
            for c in corners {
                let v = resolve(c.v, positions.len(), *line)?;
                let t = match (use_vt, c.vt) {
                    (true, Some(t)) => resolve(t, texcoords.len(), *line)?,
                    _ => usize::MAX,
                };
                let n = match (use_vn, c.vn) {
                    (true, Some(n)) => resolve(n, normals.len(), *line)?,
                    _ => usize::MAX,
                };
                let next = mesh.vertices.len() as u32;
                let id = *lookup.entry((v, t, n)).or_insert_with(|| {
                    mesh.vertices.push(positions[v]);
                    if use_vt {
                        uvs.push(texcoords[t]);
                    }
                    if use_vn {
                        vns.push(normals[n]);
                    }
                    if has_colors {
                        vcs.push(normalize_color(colors[v]));
                    }
                    next
                });
                idx.push(id);
            }
            fan(&idx, &mut faces);
        }
        if use_vt {
            mesh.uvs = Some(uvs);
        }
        if use_vn {
            mesh.normals = Some(vns);
        }
        if has_colors {
            mesh.vertex_colors = Some(vcs);
        }
    }
    mesh.faces = drop_repeated(faces);
    finish_normals(&mut mesh);
    Ok(mesh)
}

fn normalize_color(c: Vector3<f64>) -> Vector3<f64> {
    if c.max() > 1.0 {
        c / 255.0
    } else {
        c
    }
}

fn fan(idx: &[u32], faces: &mut Vec<[u32; 3]>) {
    for k in 1..idx.len() - 1 {
        faces.push([idx[0], idx[k], idx[k + 1]]);
    }
}

fn drop_repeated(faces: Vec<[u32; 3]>) -> Vec<[u32; 3]> {
    let before = faces.len();
    let kept: Vec<_> = faces
        .into_iter()
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .collect();
    if kept.len() != before {
        log::warn!("dropped {} faces with repeated vertices", before - kept.len());
    }
    kept
}

/// File normals are renormalized; a zero normal invalidates the whole set so
/// it gets recomputed downstream.
fn finish_normals(mesh: &mut Mesh) {
    if let Some(normals) = &mut mesh.normals {
        let mut ok = true;
        for n in normals.iter_mut() {
            let len = n.norm();
            if len > 1e-12 && len.is_finite() {
                *n /= len;
            } else {
                ok = false;
            }
        }
        if !ok {
            mesh.normals = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        Ok(match self {
            Scalar::I8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as i8 as f64
            }
            Scalar::U8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as f64
            }
            Scalar::I16 => {
                r.read_exact(&mut b[..2])?;
                i16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::U16 => {
                r.read_exact(&mut b[..2])?;
                u16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::I32 => {
                r.read_exact(&mut b[..4])?;
                i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::U32 => {
                r.read_exact(&mut b[..4])?;
                u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F32 => {
                r.read_exact(&mut b[..4])?;
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F64 => {
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse_ply(reader: &mut impl BufRead) -> Result<Mesh, MeshError> {
    let mut line_no = 0usize;
    let mut next_line = |reader: &mut dyn BufRead| -> Result<String, MeshError> {
        line_no += 1;
        let mut s = String::new();
        let n = reader.read_line(&mut s).map_err(|e| MeshError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if n == 0 {
            return Err(MeshError::Parse {
                line: line_no,
                message: "unexpected end of header".into(),
            });
        }
        Ok(s.trim_end().to_string())
    };
    let header_err = |line: usize, message: &str| MeshError::Parse {
        line,
        message: message.to_string(),
    };

    if next_line(reader)? != "ply" {
        return Err(header_err(1, "missing ply magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut line = 1usize;
    loop {
        let l = next_line(reader)?;
        line += 1;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => {
                return Err(MeshError::Format(format!("PLY format {other}")));
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| header_err(line, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line, "property before element"))?;
                let ct = Scalar::parse(count_ty).ok_or_else(|| header_err(line, "bad type"))?;
                let it = Scalar::parse(item_ty).ok_or_else(|| header_err(line, "bad type"))?;
                el.properties.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line, "property before element"))?;
                let t = Scalar::parse(ty).ok_or_else(|| header_err(line, "bad type"))?;
                el.properties.push(Property::Scalar(name.to_string(), t));
            }
            ["end_header"] => break,
            _ => return Err(header_err(line, "unrecognized header line")),
        }
    }

    let body_err = |e: std::io::Error| MeshError::Parse {
        line: 0,
        message: format!("truncated body: {e}"),
    };
    let mut mesh = Mesh::default();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut raw_faces: Vec<Vec<i64>> = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut values: HashMap<&str, f64> = HashMap::new();
            let mut color_scale = 1.0;
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = ty.read(reader).map_err(body_err)?;
                        if matches!(name.as_str(), "red" | "green" | "blue") && *ty == Scalar::U8 {
                            color_scale = 255.0;
                        }
                        values.insert(name.as_str(), v);
                    }
                    Property::List(name, ct, it) => {
                        let n = ct.read(reader).map_err(body_err)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(it.read(reader).map_err(body_err)? as i64);
                        }
                        if el.name == "face"
                            && (name == "vertex_indices" || name == "vertex_index")
                        {
                            raw_faces.push(items);
                        }
                    }
                }
            }
            if el.name == "vertex" {
                let g = |k: &str| values.get(k).copied();
                let (Some(x), Some(y), Some(z)) = (g("x"), g("y"), g("z")) else {
                    return Err(MeshError::Format("vertex lacks x/y/z".into()));
                };
                mesh.vertices.push(Vector3::new(x, y, z));
                if let (Some(nx), Some(ny), Some(nz)) = (g("nx"), g("ny"), g("nz")) {
                    normals.push(Vector3::new(nx, ny, nz));
                }
                let u = g("s").or(g("u")).or(g("texture_u"));
                let v = g("t").or(g("v")).or(g("texture_v"));
                if let (Some(u), Some(v)) = (u, v) {
                    uvs.push(Vector2::new(u, v));
                }
                if let (Some(r), Some(gr), Some(b)) = (g("red"), g("green"), g("blue")) {
                    colors.push(Vector3::new(r, gr, b) / color_scale);
                }
            }
        }
    }
    if mesh.vertices.is_empty() || raw_faces.is_empty() {
        return Err(MeshError::Empty);
    }
    let count = mesh.vertices.len();
    let mut faces = Vec::new();
    for (fi, poly) in raw_faces.iter().enumerate() {
        if poly.len() < 3 {
            return Err(MeshError::Format(format!("face {fi} has fewer than 3 corners")));
        }
        let mut idx = Vec::with_capacity(poly.len());
        for &i in poly {
            if i < 0 || i as usize >= count {
                return Err(MeshError::IndexOutOfRange {
                    face: fi,
                    index: i.unsigned_abs(),
                    count,
                });
            }
            idx.push(i as u32);
        }
        fan(&idx, &mut faces);
    }
    mesh.faces = drop_repeated(faces);
    if normals.len() == count {
        mesh.normals = Some(normals);
    }
    if uvs.len() == count {
        mesh.uvs = Some(uvs);
    }
    if colors.len() == count {
        mesh.vertex_colors = Some(colors);
    }
    finish_normals(&mut mesh);
    Ok(mesh)
}

/// Writes OBJ with `v [r g b]`, `vt`, `vn` and `f v/vt/vn` records. When a
/// material library name is given, a `usemtl texture` line is emitted.
pub fn write_obj(mesh: &Mesh, path: impl AsRef<Path>, mtllib: Option<&str>) -> Result<(), MeshError> {
    let path = path.as_ref();
    let io_err = |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut body = String::new();
    use std::fmt::Write as _;
    if let Some(lib) = mtllib {
        let _ = writeln!(body, "mtllib {lib}");
        let _ = writeln!(body, "usemtl texture");
    }
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(body, "v {} {} {} {} {} {}", v.x, v.y, v.z, c.x, c.y, c.z);
            }
            None => {
                let _ = writeln!(body, "v {} {} {}", v.x, v.y, v.z);
            }
        }
    }
    if let Some(uvs) = &mesh.uvs {
        for uv in uvs {
            let _ = writeln!(body, "vt {} {}", uv.x, uv.y);
        }
    }
    if let Some(normals) = &mesh.normals {
        for n in normals {
            let _ = writeln!(body, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    let (t, n) = (mesh.uvs.is_some(), mesh.normals.is_some());
    for f in &mesh.faces {
        body.push('f');
        for &i in f {
            let i = i + 1;
            let _ = match (t, n) {
                (true, true) => write!(body, " {i}/{i}/{i}"),
                (true, false) => write!(body, " {i}/{i}"),
                (false, true) => write!(body, " {i}//{i}"),
                (false, false) => write!(body, " {i}"),
            };
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Binary little-endian PLY with float positions, optional normals, uvs and
/// 8-bit colors.
pub fn write_ply(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    let io_err = |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\ncomment ultraman\n");
    header += &format!("element vertex {}\n", mesh.vertices.len());
    header += "property float x\nproperty float y\nproperty float z\n";
    if mesh.normals.is_some() {
        header += "property float nx\nproperty float ny\nproperty float nz\n";
    }
    if mesh.uvs.is_some() {
        header += "property float s\nproperty float t\n";
    }
    if mesh.vertex_colors.is_some() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    header += &format!("element face {}\n", mesh.faces.len());
    header += "property list uchar int vertex_indices\nend_header\n";
    out.extend_from_slice(header.as_bytes());
    for i in 0..mesh.vertices.len() {
        let mut put = |x: f64| out.extend_from_slice(&(x as f32).to_le_bytes());
        let v = mesh.vertices[i];
        put(v.x);
        put(v.y);
        put(v.z);
        if let Some(n) = &mesh.normals {
            put(n[i].x);
            put(n[i].y);
            put(n[i].z);
        }
        if let Some(uv) = &mesh.uvs {
            put(uv[i].x);
            put(uv[i].y);
        }
        if let Some(c) = &mesh.vertex_colors {
            for k in 0..3 {
                out.push((c[i][k].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(io_err)
}
