use std::collections::BTreeMap;

use crate::autodiff::Tensor;

use super::GeometryError;

/// Triangle mesh with counter-clockwise (outward) winding.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f32; 3]>,
    faces: Vec<[u32; 3]>,
}

impl Mesh {
    /// Validates face indices only; watertightness is checked separately by
    /// [`check_watertight`].
    pub fn new(vertices: Vec<[f32; 3]>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v as usize >= n {
                    return Err(GeometryError::IndexOutOfRange {
                        face: fi,
                        index: v,
                        vertices: n,
                    });
                }
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f32; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Vertex buffer as an `[N, 3]` tensor.
    pub fn vertex_tensor(&self) -> Tensor {
        let data = self.vertices.iter().flatten().copied().collect();
        Tensor::new([self.vertices.len(), 3], data).expect("vertex buffer shape")
    }

    /// Same topology with vertices taken from an `[N, 3]` tensor.
    pub fn with_vertex_tensor(&self, t: &Tensor) -> Result<Self, GeometryError> {
        if t.shape() != [self.vertices.len(), 3] {
            return Err(GeometryError::VertexShape {
                expected: self.vertices.len(),
                shape: t.shape().to_vec(),
            });
        }
        let vertices = t
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn translated(&self, by: [f32; 3]) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] + by[0], v[1] + by[1], v[2] + by[2]])
                .collect(),
            faces: self.faces.clone(),
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f32; 3], [f32; 3]) {
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    pub fn is_finite(&self) -> bool {
        self.vertices.iter().flatten().all(|v| v.is_finite())
    }

    /// Unique undirected edges `(min, max)` in first-seen order.
    pub fn edges(&self) -> Vec<[u32; 2]> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = [a.min(b), a.max(b)];
                if seen.insert(e) {
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    pub fn face_area(&self, f: usize) -> f32 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * dot(n, n).sqrt()
    }

    /// Enclosed volume by the divergence theorem (positive for outward winding).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize].map(f64::from));
                let cr = [
                    b[1] * c[2] - b[2] * c[1],
                    b[2] * c[0] - b[0] * c[2],
                    b[0] * c[1] - b[1] * c[0],
                ];
                (a[0] * cr[0] + a[1] * cr[1] + a[2] * cr[2]) / 6.0
            })
            .sum()
    }
}

pub(crate) fn sub(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f32; 3], b: [f32; 3]) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatertightReport {
    pub is_watertight: bool,
    /// Undirected edges that are not shared by exactly two faces traversing
    /// them in opposite directions.
    pub bad_edges: Vec<[u32; 2]>,
    pub euler_characteristic: i64,
}

/// Every edge must bound exactly two faces with consistent orientation.
pub fn check_watertight(mesh: &Mesh) -> Result<WatertightReport, GeometryError> {
    let n = mesh.vertex_count();
    // (forward uses, backward uses) per undirected edge, where forward means
    // the face walks min -> max
    let mut uses: BTreeMap<[u32; 2], (u32, u32)> = BTreeMap::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        for &v in f {
            if v as usize >= n {
                return Err(GeometryError::IndexOutOfRange {
                    face: fi,
                    index: v,
                    vertices: n,
                });
            }
        }
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let entry = uses.entry([a.min(b), a.max(b)]).or_default();
            if a < b {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
    }
    let bad_edges: Vec<[u32; 2]> = uses
        .iter()
        .filter(|(e, &(fwd, bwd))| e[0] == e[1] || fwd != 1 || bwd != 1)
        .map(|(e, _)| *e)
        .collect();
    let euler = n as i64 - uses.len() as i64 + mesh.face_count() as i64;
    Ok(WatertightReport {
        is_watertight: bad_edges.is_empty() && !mesh.faces().is_empty(),
        bad_edges,
        euler_characteristic: euler,
    })
}

pub(crate) fn require_watertight(mesh: &Mesh) -> Result<(), GeometryError> {
    let report = check_watertight(mesh)?;
    if report.is_watertight {
        Ok(())
    } else {
        Err(GeometryError::NotWatertight {
            bad_edges: report.bad_edges.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    #[test]
    fn icosphere_is_watertight() {
        let m = icosphere(1).unwrap();
        let r = check_watertight(&m).unwrap();
        assert!(r.is_watertight);
        assert_eq!(r.euler_characteristic, 2);
    }

    #[test]
    fn deleting_a_face_opens_three_edges() {
        let m = icosphere(1).unwrap();
        let mut faces = m.faces().to_vec();
        faces.remove(7);
        let open = Mesh::new(m.vertices().to_vec(), faces).unwrap();
        let r = check_watertight(&open).unwrap();
        assert!(!r.is_watertight);
        assert_eq!(r.bad_edges.len(), 3);
    }

    #[test]
    fn flipped_face_breaks_orientation() {
        let m = icosphere(0).unwrap();
        let mut faces = m.faces().to_vec();
        faces[0] = [faces[0][0], faces[0][2], faces[0][1]];
        let flipped = Mesh::new(m.vertices().to_vec(), faces).unwrap();
        let r = check_watertight(&flipped).unwrap();
        assert!(!r.is_watertight);
        assert_eq!(r.bad_edges.len(), 3);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(matches!(
            Mesh::new(vec![[0.0; 3]; 2], vec![[0, 1, 2]]),
            Err(GeometryError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn sphere_volume_is_positive() {
        let m = icosphere(3).unwrap();
        let v = m.signed_volume();
        assert!(v > 4.0 && v < 4.19, "{v}");
    }
}
