use super::mesh::require_watertight;
use super::{GeometryError, Mesh};

pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 128;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn cube(half: f32) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn extent(&self) -> [f32; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().map(|&e| f64::from(e)).product()
    }

    pub fn translated(&self, by: [f32; 3]) -> Self {
        Self {
            min: [
                self.min[0] + by[0],
                self.min[1] + by[1],
                self.min[2] + by[2],
            ],
            max: [
                self.max[0] + by[0],
                self.max[1] + by[1],
                self.max[2] + by[2],
            ],
        }
    }
}

/// Occupancy of the voxel centres of a regular `R^3` grid, indexed
/// `[(x * R + y) * R + z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    bounds: Aabb,
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(
        resolution: usize,
        bounds: Aabb,
        occupancy: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        if occupancy.len() != resolution.pow(3) {
            return Err(GeometryError::InvalidArgument(format!(
                "occupancy length {} != {resolution}^3",
                occupancy.len()
            )));
        }
        Ok(Self {
            resolution,
            bounds,
            occupancy,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[(x * self.resolution + y) * self.resolution + z]
    }

    pub fn occupied(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied() as f64 / self.occupancy.len() as f64
    }
}

/// Voxelizes inside the mesh bounding box padded by 5% of its extent per side.
pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<VoxelGrid, GeometryError> {
    let (lo, hi) = mesh.bounds();
    let mut bounds = Aabb { min: lo, max: hi };
    for a in 0..3 {
        let pad = 0.05 * (hi[a] - lo[a]);
        bounds.min[a] -= pad;
        bounds.max[a] += pad;
    }
    voxelize_in(mesh, resolution, bounds)
}

/// Voxelizes in fixed `bounds` by ray parity along +z through voxel centres.
///
/// Crossings use a half-open edge rule (an edge-coincident ray is claimed by
/// exactly one of two triangles that meet there from opposite sides), so a
/// closed surface yields an even crossing count on every column. An odd
/// count is reported as an error.
pub fn voxelize_in(
    mesh: &Mesh,
    resolution: usize,
    bounds: Aabb,
) -> Result<VoxelGrid, GeometryError> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(GeometryError::ResolutionOutOfRange(resolution));
    }
    let ext = bounds.extent();
    if ext.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(GeometryError::DegenerateBounds);
    }
    if !mesh.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    require_watertight(mesh)?;

    let r = resolution;
    let cell: [f64; 3] = [0, 1, 2].map(|a| f64::from(ext[a]) / r as f64);
    let center = |a: usize, i: usize| f64::from(bounds.min[a]) + (i as f64 + 0.5) * cell[a];
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); r * r];

    let verts: Vec<[f64; 3]> = mesh.vertices().iter().map(|v| v.map(f64::from)).collect();
    for f in mesh.faces() {
        let mut p = f.map(|i| verts[i as usize]);
        let mut area =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            p.swap(1, 2);
            area = -area;
        }
        let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let col_range = |lo: f64, hi: f64, a: usize| {
            let first = ((lo - f64::from(bounds.min[a])) / cell[a] - 0.5)
                .ceil()
                .max(0.0) as usize;
            let last = ((hi - f64::from(bounds.min[a])) / cell[a] - 0.5).floor();
            if last < 0.0 {
                return (1, 0);
            }
            (first, (last as usize).min(r - 1))
        };
        let (x0, x1) = col_range(xmin, xmax, 0);
        let (y0, y1) = col_range(ymin, ymax, 1);
        for xi in x0..=x1 {
            let px = center(0, xi);
            for yi in y0..=y1 {
                let py = center(1, yi);
                let mut w = [0.0f64; 3];
                let mut inside = true;
                for k in 0..3 {
                    let a = p[(k + 1) % 3];
                    let b = p[(k + 2) % 3];
                    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                    let e = dx * (py - a[1]) - dy * (px - a[0]);
                    let owns_edge = dy > 0.0 || (dy == 0.0 && dx < 0.0);
                    if e < 0.0 || (e == 0.0 && !owns_edge) {
                        inside = false;
                        break;
                    }
                    w[k] = e;
                }
                if inside {
                    let z = (w[0] * p[0][2] + w[1] * p[1][2] + w[2] * p[2][2]) / area;
                    hits[xi * r + yi].push(z);
                }
            }
        }
    }

    let mut occupancy = vec![false; r * r * r];
    for xi in 0..r {
        for yi in 0..r {
            let col = &mut hits[xi * r + yi];
            if col.len() % 2 == 1 {
                return Err(GeometryError::ParityError { column: [xi, yi] });
            }
            col.sort_by(f64::total_cmp);
            for zi in 0..r {
                let pz = center(2, zi);
                let below = col.iter().take_while(|&&z| z < pz).count();
                occupancy[(xi * r + yi) * r + zi] = below % 2 == 1;
            }
        }
    }
    VoxelGrid::new(r, bounds, occupancy)
}

/// `|a and b| / |a or b|`, 1 when both grids are empty.
pub fn voxel_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, GeometryError> {
    if a.resolution != b.resolution {
        return Err(GeometryError::ResolutionMismatch(
            a.resolution,
            b.resolution,
        ));
    }
    if a.bounds != b.bounds {
        return Err(GeometryError::BoundsMismatch);
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.occupancy.iter().zip(&b.occupancy) {
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
