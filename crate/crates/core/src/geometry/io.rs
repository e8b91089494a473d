//! Mesh interchange.
//!
//! OBJ output is ASCII: one `v x y z` line per vertex followed by one
//! `f i j k` line per face with 1-based indices. Coordinates use the shortest
//! decimal form that parses back to the same `f32`.
//!
//! STL output is binary little-endian: an 80-byte header, a `u32` triangle
//! count, then per triangle a unit normal, three vertices (12 `f32` in all)
//! and a `u16` attribute of 0, for `84 + 50 * faces` bytes. Normals come from
//! the counter-clockwise winding.

use std::fmt::Write as _;
use std::str::FromStr;

use super::mesh::{cross, dot, require_watertight, sub};
use super::{GeometryError, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Stl,
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Obj => "obj",
            MeshFormat::Stl => "stl",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            MeshFormat::Obj => "model/obj",
            MeshFormat::Stl => "model/stl",
        }
    }
}

impl FromStr for MeshFormat {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "stl" => Ok(MeshFormat::Stl),
            other => Err(GeometryError::InvalidArgument(format!(
                "unknown mesh format `{other}`"
            ))),
        }
    }
}

const STL_HEADER: &[u8] = b"sketchmesh binary STL";

/// Serializes `mesh`. Both formats refuse meshes that are not watertight.
pub fn export_mesh(mesh: &Mesh, format: MeshFormat) -> Result<Vec<u8>, GeometryError> {
    require_watertight(mesh)?;
    Ok(match format {
        MeshFormat::Obj => to_obj(mesh).into_bytes(),
        MeshFormat::Stl => to_stl(mesh),
    })
}

pub fn write_mesh(
    mesh: &Mesh,
    format: MeshFormat,
    path: &std::path::Path,
) -> Result<(), GeometryError> {
    let bytes = export_mesh(mesh, format)?;
    std::fs::write(path, bytes).map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))
}

pub fn to_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertex_count() * 32 + mesh.face_count() * 16);
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn to_stl(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.face_count());
    let mut header = [0u8; 80];
    header[..STL_HEADER.len()].copy_from_slice(STL_HEADER);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.face_count() as u32).to_le_bytes());
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| mesh.vertices()[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        let len = dot(n, n).sqrt();
        let n = if len > 0.0 {
            n.map(|x| x / len)
        } else {
            [0.0; 3]
        };
        for v in [n, a, b, c] {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

/// Reads `v` and triangular `f` records; other statements are ignored.
pub fn parse_obj(text: &str) -> Result<Mesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = || GeometryError::Parse(format!("line {}: `{line}`", lineno + 1));
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f32> = parts
                    .map(|p| p.parse().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                if xyz.len() < 3 {
                    return Err(bad());
                }
                vertices.push([xyz[0], xyz[1], xyz[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|p| {
                        let first = p.split('/').next().unwrap_or("");
                        first
                            .parse::<u32>()
                            .ok()
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(bad)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(bad());
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

/// `(normal, [a, b, c])` as stored in a binary STL record.
pub type StlTriangle = ([f32; 3], [[f32; 3]; 3]);

/// Triangles of a binary STL.
pub fn parse_stl(bytes: &[u8]) -> Result<Vec<StlTriangle>, GeometryError> {
    if bytes.len() < 84 {
        return Err(GeometryError::Parse("STL shorter than header".into()));
    }
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(GeometryError::Parse(format!(
            "STL length {} does not match {count} triangles",
            bytes.len()
        )));
    }
    let f = |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let v3 = |o: usize| [f(o), f(o + 4), f(o + 8)];
    Ok((0..count)
        .map(|t| {
            let o = 84 + 50 * t;
            (v3(o), [v3(o + 12), v3(o + 24), v3(o + 36)])
        })
        .collect())
}

/// Indexed mesh from a binary STL. Corners with bit-identical coordinates
/// are merged, so an exported mesh comes back with its topology.
pub fn stl_to_mesh(bytes: &[u8]) -> Result<Mesh, GeometryError> {
    let mut index = std::collections::HashMap::new();
    let (mut vertices, mut faces) = (Vec::new(), Vec::new());
    for (_, tri) in parse_stl(bytes)? {
        let mut f = [0u32; 3];
        for (k, v) in tri.iter().enumerate() {
            let key = v.map(f32::to_bits);
            f[k] = *index.entry(key).or_insert_with(|| {
                vertices.push(*v);
                (vertices.len() - 1) as u32
            });
        }
        faces.push(f);
    }
    Mesh::new(vertices, faces)
}

/// Reads an OBJ or binary STL, picking the format from the extension.
pub fn read_mesh(path: &std::path::Path) -> Result<Mesh, GeometryError> {
    let io = |e: std::io::Error| GeometryError::Io(format!("{}: {e}", path.display()));
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.parse::<MeshFormat>()? {
        MeshFormat::Obj => parse_obj(&std::fs::read_to_string(path).map_err(io)?),
        MeshFormat::Stl => stl_to_mesh(&std::fs::read(path).map_err(io)?),
    }
}
