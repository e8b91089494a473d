//! Smoothness regularizers on mesh vertices.
//!
//! Both are built from tape primitives over fixed gather patterns, so they
//! differentiate through the ordinary reverse pass.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::{SparseRows, Tape, TensorError, Var};

use super::{GeometryError, Mesh};

/// Gather patterns derived from a fixed face list.
#[derive(Debug, Clone)]
pub struct RegularizerTopology {
    vertices: usize,
    /// Row `i` averages the one-ring neighbours of vertex `i`.
    neighbour_mean: Arc<SparseRows>,
    /// For each interior edge `(v0, v1)` with opposite vertices `v2`, `v3`.
    edge_v0: Arc<SparseRows>,
    edge_v1: Arc<SparseRows>,
    wing_a: Arc<SparseRows>,
    wing_b: Arc<SparseRows>,
    interior_edges: usize,
}

impl RegularizerTopology {
    pub fn new(mesh: &Mesh) -> Result<Self, GeometryError> {
        let n = mesh.vertex_count();
        let mut neighbours: Vec<Vec<u32>> = vec![Vec::new(); n];
        for e in mesh.edges() {
            neighbours[e[0] as usize].push(e[1]);
            neighbours[e[1] as usize].push(e[0]);
        }
        if let Some(v) = neighbours.iter().position(Vec::is_empty) {
            return Err(GeometryError::IsolatedVertex(v));
        }
        let rows: Vec<Vec<(u32, f32)>> = neighbours
            .iter()
            .map(|nb| {
                let w = 1.0 / nb.len() as f32;
                nb.iter().map(|&j| (j, w)).collect()
            })
            .collect();

        // undirected edge -> opposite vertices of incident faces
        let mut opposite: BTreeMap<[u32; 2], Vec<u32>> = BTreeMap::new();
        for f in mesh.faces() {
            for k in 0..3 {
                let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                opposite.entry([a.min(b), a.max(b)]).or_default().push(c);
            }
        }
        let (mut v0, mut v1, mut wa, mut wb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (edge, opp) in &opposite {
            match opp.as_slice() {
                [_] => {}
                [a, b] => {
                    v0.push(edge[0]);
                    v1.push(edge[1]);
                    wa.push(*a);
                    wb.push(*b);
                }
                _ => {
                    return Err(GeometryError::NonManifoldEdge {
                        edge: *edge,
                        faces: opp.len(),
                    })
                }
            }
        }
        let gather = |idx: &[u32]| -> Result<Arc<SparseRows>, GeometryError> {
            Ok(Arc::new(SparseRows::gather(idx, n)?))
        };
        Ok(Self {
            vertices: n,
            neighbour_mean: Arc::new(SparseRows::from_rows(&rows, n)?),
            interior_edges: v0.len(),
            edge_v0: gather(&v0)?,
            edge_v1: gather(&v1)?,
            wing_a: gather(&wa)?,
            wing_b: gather(&wb)?,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn interior_edge_count(&self) -> usize {
        self.interior_edges
    }

    /// Mean over vertices of `|v_i - mean(neighbours(v_i))|^2`.
    pub fn laplacian(&self, tape: &mut Tape, vertices: Var) -> Result<Var, TensorError> {
        let avg = tape.sparse_rows(&self.neighbour_mean, vertices)?;
        let delta = tape.sub(vertices, avg)?;
        let sq = tape.mul(delta, delta)?;
        let per_vertex = tape.sum(sq, 1)?;
        tape.mean_all(per_vertex)
    }

    /// Mean over interior edges of `(cos(theta) + 1)^2`.
    ///
    /// `theta` is the angle between the two wings of the edge, each wing being
    /// the component of (opposite vertex - v0) orthogonal to the edge; a flat
    /// fold has `theta = pi` and contributes nothing.
    pub fn flatten(&self, tape: &mut Tape, vertices: Var) -> Result<Var, TensorError> {
        if self.interior_edges == 0 {
            let zero = tape.constant(crate::autodiff::Tensor::scalar(0.0));
            return Ok(zero);
        }
        let e = self.interior_edges;
        let p0 = tape.sparse_rows(&self.edge_v0, vertices)?;
        let p1 = tape.sparse_rows(&self.edge_v1, vertices)?;
        let pa = tape.sparse_rows(&self.wing_a, vertices)?;
        let pb = tape.sparse_rows(&self.wing_b, vertices)?;
        let axis = tape.sub(p1, p0)?;
        let ra = tape.sub(pa, p0)?;
        let rb = tape.sub(pb, p0)?;
        let axis_sq = row_dot(tape, axis, axis)?;
        let inv_axis_sq = tape.pow(axis_sq, -1.0)?;
        let wing_a = reject(tape, ra, axis, inv_axis_sq, e)?;
        let wing_b = reject(tape, rb, axis, inv_axis_sq, e)?;
        let num = row_dot(tape, wing_a, wing_b)?;
        let na = row_dot(tape, wing_a, wing_a)?;
        let nb = row_dot(tape, wing_b, wing_b)?;
        let den = tape.mul(na, nb)?;
        let den = tape.shift(den, 1e-20)?;
        let inv = tape.pow(den, -0.5)?;
        let cos = tape.mul(num, inv)?;
        let shifted = tape.shift(cos, 1.0)?;
        let sq = tape.mul(shifted, shifted)?;
        tape.mean_all(sq)
    }
}

fn row_dot(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TensorError> {
    let p = tape.mul(a, b)?;
    tape.sum(p, 1)
}

/// Component of `r` orthogonal to `axis` (row-wise).
fn reject(
    tape: &mut Tape,
    r: Var,
    axis: Var,
    inv_axis_sq: Var,
    rows: usize,
) -> Result<Var, TensorError> {
    let proj = row_dot(tape, r, axis)?;
    let coef = tape.mul(proj, inv_axis_sq)?;
    let coef = tape.reshape(coef, &[rows, 1])?;
    let along = tape.mul(axis, coef)?;
    tape.sub(r, along)
}

fn evaluate(
    mesh: &Mesh,
    f: impl Fn(&RegularizerTopology, &mut Tape, Var) -> Result<Var, TensorError>,
) -> Result<f32, GeometryError> {
    let topo = RegularizerTopology::new(mesh)?;
    let mut tape = Tape::new();
    let v = tape.constant(mesh.vertex_tensor());
    let out = f(&topo, &mut tape, v)?;
    Ok(tape.value(out)?.item()?)
}

/// Uniform-weight Laplacian smoothness of `mesh`.
pub fn laplacian_loss(mesh: &Mesh) -> Result<f32, GeometryError> {
    evaluate(mesh, |t, tape, v| t.laplacian(tape, v))
}

/// Dihedral flatness of `mesh` over edges shared by two faces.
pub fn flatten_loss(mesh: &Mesh) -> Result<f32, GeometryError> {
    evaluate(mesh, |t, tape, v| t.flatten(tape, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::geometry::icosphere;

    fn f64v(v: [f32; 3]) -> [f64; 3] {
        v.map(f64::from)
    }

    /// Independent per-edge evaluation in f64.
    fn flatten_direct(mesh: &Mesh) -> f64 {
        let mut opposite: BTreeMap<[u32; 2], Vec<u32>> = BTreeMap::new();
        for f in mesh.faces() {
            for k in 0..3 {
                let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                opposite.entry([a.min(b), a.max(b)]).or_default().push(c);
            }
        }
        let v = |i: u32| f64v(mesh.vertices()[i as usize]);
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let mut total = 0.0;
        let mut count = 0;
        for (e, opp) in opposite {
            if opp.len() != 2 {
                continue;
            }
            // dihedral via face normals: theta = pi - angle(n1, n2)
            let (p0, p1) = (v(e[0]), v(e[1]));
            let n1 = cross(sub(p1, p0), sub(v(opp[0]), p0));
            let n2 = cross(sub(v(opp[1]), p0), sub(p1, p0));
            let cos_normals = dot(n1, n2) / (dot(n1, n1).sqrt() * dot(n2, n2).sqrt());
            let theta = std::f64::consts::PI - cos_normals.clamp(-1.0, 1.0).acos();
            total += (theta.cos() + 1.0).powi(2);
            count += 1;
        }
        total / count as f64
    }

    fn two_triangles(fold: f32) -> Mesh {
        // shared edge along x; second wing rotated by `fold` out of plane
        Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.3, 1.0, 0.0],
                [0.6, -fold.cos(), fold.sin()],
            ],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap()
    }

    #[test]
    fn coplanar_pair_is_flat() {
        assert!(flatten_loss(&two_triangles(0.0)).unwrap().abs() < 1e-10);
    }

    #[test]
    fn perpendicular_pair_scores_one() {
        let l = flatten_loss(&two_triangles(std::f32::consts::FRAC_PI_2)).unwrap();
        assert!((l - 1.0).abs() < 1e-6, "{l}");
    }

    #[test]
    fn flatten_matches_direct_evaluation() {
        for level in 0..=2 {
            let m = icosphere(level).unwrap();
            let got = f64::from(flatten_loss(&m).unwrap());
            let want = flatten_direct(&m);
            assert!(
                (got - want).abs() <= 1e-5 * want.max(1e-3),
                "level {level}: {got} vs {want}"
            );
        }
        let got = f64::from(flatten_loss(&two_triangles(0.7)).unwrap());
        assert!((got - flatten_direct(&two_triangles(0.7))).abs() < 1e-6);
    }

    #[test]
    fn symmetric_planar_ring_has_zero_laplacian_at_centre() {
        // hexagon fan around the origin
        let mut verts = vec![[0.0f32, 0.0, 0.0]];
        for k in 0..6 {
            let a = k as f32 * std::f32::consts::PI / 3.0;
            verts.push([a.cos(), a.sin(), 0.0]);
        }
        let faces: Vec<[u32; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let m = Mesh::new(verts, faces).unwrap();
        let topo = RegularizerTopology::new(&m).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(m.vertex_tensor());
        let avg = tape.sparse_rows(&topo.neighbour_mean, v).unwrap();
        let centre = &tape.value(avg).unwrap().data()[..3];
        assert!(centre.iter().all(|c| c.abs() < 1e-6), "{centre:?}");
    }

    #[test]
    fn laplacian_matches_hand_computation() {
        // two-ring patch: square split into four triangles around a raised centre
        let verts = vec![
            [0.0, 0.0, 0.5],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]];
        let m = Mesh::new(verts, faces).unwrap();
        // centre: neighbours average (0,0,0) -> |(0,0,0.5)|^2 = 0.25
        // rim vertex 1: neighbours 0, 2, 4 -> mean (0, 0, 1/6); delta (1, 0, -1/6)
        //   |delta|^2 = 1 + 1/36; same for every rim vertex by symmetry
        let want = (0.25 + 4.0 * (1.0 + 1.0 / 36.0)) / 5.0;
        let got = laplacian_loss(&m).unwrap();
        assert!((f64::from(got) - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn curved_surface_is_not_smooth() {
        assert!(laplacian_loss(&icosphere(2).unwrap()).unwrap() > 0.0);
        assert!(flatten_loss(&icosphere(2).unwrap()).unwrap() > 0.0);
    }

    #[test]
    fn isolated_vertex_is_rejected() {
        let m = Mesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0; 3]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            laplacian_loss(&m),
            Err(GeometryError::IsolatedVertex(3))
        ));
    }

    #[test]
    fn non_manifold_edge_is_rejected() {
        let m = Mesh::new(
            vec![
                [0.0; 3],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
        )
        .unwrap();
        assert!(matches!(
            flatten_loss(&m),
            Err(GeometryError::NonManifoldEdge { .. })
        ));
    }

    #[test]
    fn regularizers_pass_grad_check() {
        let m = icosphere(1).unwrap();
        let topo = RegularizerTopology::new(&m).unwrap();
        // perturb so no configuration is symmetric
        let x = m.vertex_tensor().map(|v| v * 1.1);
        let x = crate::autodiff::Tensor::from_fn(x.shape().to_vec(), |i| {
            x.data()[i] + 0.05 * ((i * 7919) as f32).sin()
        });
        let cfg = GradCheckConfig::default();
        let lap = grad_check(|t, v| topo.laplacian(t, v), &x, &cfg).unwrap();
        assert!(lap.passed, "laplacian {lap}");
        let flat = grad_check(|t, v| topo.flatten(t, v), &x, &cfg).unwrap();
        assert!(flat.passed, "flatten {flat}");
    }
}
