use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::{SparseRows, Tape, Tensor, TensorError, Var};

use super::{GeometryError, Mesh};

pub const MAX_LEVEL: u32 = 5;

/// One loop-style 1-to-4 split of a triangle mesh.
///
/// New vertices are appended after the original ones, one per undirected
/// edge in first-seen face order; `edge_vertices[i]` is the edge that spawns
/// vertex `parent_vertices + i`.
#[derive(Debug, Clone)]
pub struct Subdivision {
    pub parent_vertices: usize,
    pub edge_vertices: Vec<[u32; 2]>,
    pub faces: Vec<[u32; 3]>,
    ends_a: Arc<SparseRows>,
    ends_b: Arc<SparseRows>,
}

impl Subdivision {
    pub fn of(mesh: &Mesh) -> Self {
        let mut lookup: HashMap<[u32; 2], u32> = HashMap::new();
        let mut edge_vertices = Vec::new();
        let base = mesh.vertex_count() as u32;
        let mut mid = |a: u32, b: u32| -> u32 {
            let key = [a.min(b), a.max(b)];
            *lookup.entry(key).or_insert_with(|| {
                edge_vertices.push(key);
                base + edge_vertices.len() as u32 - 1
            })
        };
        let mut faces = Vec::with_capacity(mesh.face_count() * 4);
        for &[a, b, c] in mesh.faces() {
            let ab = mid(a, b);
            let bc = mid(b, c);
            let ca = mid(c, a);
            faces.push([a, ab, ca]);
            faces.push([b, bc, ab]);
            faces.push([c, ca, bc]);
            faces.push([ab, bc, ca]);
        }
        let n = mesh.vertex_count();
        let first: Vec<u32> = edge_vertices.iter().map(|e| e[0]).collect();
        let second: Vec<u32> = edge_vertices.iter().map(|e| e[1]).collect();
        Self {
            parent_vertices: n,
            ends_a: Arc::new(SparseRows::gather(&first, n).expect("edge index in range")),
            ends_b: Arc::new(SparseRows::gather(&second, n).expect("edge index in range")),
            edge_vertices,
            faces,
        }
    }

    pub fn child_vertices(&self) -> usize {
        self.parent_vertices + self.edge_vertices.len()
    }

    /// Differentiable vertex refinement: keeps the parent vertices and appends
    /// one spherical midpoint per edge.
    ///
    /// The midpoint of `a`,`b` points along `a + b` with length
    /// `(|a| + |b|) / 2`, so on the unit sphere it is the great-circle
    /// midpoint and refinement of an undeformed template reproduces the next
    /// icosphere level exactly.
    pub fn refine(&self, tape: &mut Tape, vertices: Var) -> Result<Var, TensorError> {
        let n = self.edge_vertices.len();
        let a = tape.sparse_rows(&self.ends_a, vertices)?;
        let b = tape.sparse_rows(&self.ends_b, vertices)?;
        let s = tape.add(a, b)?;
        let norm_a = row_norm(tape, a)?;
        let norm_b = row_norm(tape, b)?;
        let len = tape.add(norm_a, norm_b)?;
        let len = tape.scale(len, 0.5)?;
        let ss = row_sq(tape, s)?;
        let ss = tape.shift(ss, 1e-12)?;
        let inv = tape.pow(ss, -0.5)?;
        let factor = tape.mul(len, inv)?;
        let factor = tape.reshape(factor, &[n, 1])?;
        let mids = tape.mul(s, factor)?;
        tape.concat(&[vertices, mids], 0)
    }

    /// Non-differentiable counterpart of [`Subdivision::refine`].
    pub fn refine_mesh(&self, mesh: &Mesh) -> Result<Mesh, GeometryError> {
        let mut tape = Tape::new();
        let v = tape.constant(mesh.vertex_tensor());
        let out = self.refine(&mut tape, v)?;
        let verts = tape.value(out)?;
        let vertices = verts
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Mesh::new(vertices, self.faces.clone())
    }
}

fn row_sq(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let sq = tape.mul(x, x)?;
    tape.sum(sq, 1)
}

fn row_norm(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let sq = row_sq(tape, x)?;
    let sq = tape.shift(sq, 1e-12)?;
    tape.pow(sq, 0.5)
}

/// Regular icosahedron with unit-length vertices.
pub fn icosahedron() -> Mesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let norm = (1.0 + phi * phi).sqrt();
    let vertices = raw
        .iter()
        .map(|v: &[f64; 3]| v.map(|c| (c / norm) as f32))
        .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(vertices, faces).expect("static icosahedron")
}

/// Unit sphere from `level` refinements of the icosahedron:
/// `10 * 4^level + 2` vertices and `20 * 4^level` faces.
pub fn icosphere(level: u32) -> Result<Mesh, GeometryError> {
    if level > MAX_LEVEL {
        return Err(GeometryError::LevelOutOfRange(level));
    }
    let mut mesh = icosahedron();
    for _ in 0..level {
        mesh = Subdivision::of(&mesh).refine_mesh(&mesh)?;
    }
    Ok(mesh)
}

/// Unit template directions as an `[N, 3]` tensor.
pub fn icosphere_tensor(level: u32) -> Result<Tensor, GeometryError> {
    Ok(icosphere(level)?.vertex_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::check_watertight;

    #[test]
    fn counts_follow_closed_form() {
        for level in 0..=4 {
            let m = icosphere(level).unwrap();
            assert_eq!(m.vertex_count(), 10 * 4usize.pow(level) + 2);
            assert_eq!(m.face_count(), 20 * 4usize.pow(level));
            assert_eq!(m.euler_characteristic(), 2);
        }
        assert_eq!(icosphere(2).unwrap().vertex_count(), 162);
        assert_eq!(icosphere(2).unwrap().face_count(), 320);
    }

    #[test]
    fn vertices_lie_on_unit_sphere() {
        for level in 0..=4 {
            for v in icosphere(level).unwrap().vertices() {
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                assert!((n - 1.0).abs() <= 1e-6, "level {level}: {n}");
            }
        }
    }

    #[test]
    fn level_out_of_range() {
        assert!(matches!(
            icosphere(6),
            Err(GeometryError::LevelOutOfRange(6))
        ));
    }

    #[test]
    fn faces_wind_outward() {
        let m = icosphere(2).unwrap();
        for f in 0..m.face_count() {
            assert!(m.face_area(f) > 0.0);
        }
        assert!(m.signed_volume() > 0.0);
        assert!(check_watertight(&m).unwrap().is_watertight);
    }
}
