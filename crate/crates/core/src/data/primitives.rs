use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{icosphere, Mesh};

use super::DataError;

/// Level of the icosphere whose vertices are projected onto each primitive.
pub const PRIMITIVE_LEVEL: u32 = 3;
pub const SCALE_RANGE: (f32, f32) = (0.5, 1.0);
const BLEND: f64 = 0.08;
const RAY_MAX: f64 = 2.0;
const RAY_STEPS: usize = 200;
const BISECT_ITERS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Ellipsoid,
    Box,
    Cylinder,
    Capsule,
    Composite,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Ellipsoid,
        Category::Box,
        Category::Cylinder,
        Category::Capsule,
        Category::Composite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Ellipsoid => "ellipsoid",
            Category::Box => "box",
            Category::Cylinder => "cylinder",
            Category::Capsule => "capsule",
            Category::Composite => "composite",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| DataError::UnknownCategory(s.to_string()))
    }
}

/// Axis-aligned solid centred at `center` with half extents `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solid {
    Ellipsoid {
        center: [f64; 3],
        scale: [f64; 3],
    },
    /// Box with faces at `center ± scale`.
    Box {
        center: [f64; 3],
        scale: [f64; 3],
    },
    /// Cylinder along y.
    Cylinder {
        center: [f64; 3],
        scale: [f64; 3],
    },
    /// Capsule along y: a segment of half length `scale.y / 2` swept by a
    /// sphere of radius `1/2` in the unit frame.
    Capsule {
        center: [f64; 3],
        scale: [f64; 3],
    },
}

impl Solid {
    /// Signed distance in the unit frame; negative inside. Its zero set is
    /// exact, magnitudes are only approximate after anisotropic scaling.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        let (c, s) = match *self {
            Solid::Ellipsoid { center, scale }
            | Solid::Box { center, scale }
            | Solid::Cylinder { center, scale }
            | Solid::Capsule { center, scale } => (center, scale),
        };
        let q = [
            (p[0] - c[0]) / s[0],
            (p[1] - c[1]) / s[1],
            (p[2] - c[2]) / s[2],
        ];
        let min_s = s[0].min(s[1]).min(s[2]);
        let d = match self {
            Solid::Ellipsoid { .. } => norm(q) - 1.0,
            Solid::Box { .. } => {
                let o = q.map(|v| v.abs() - 1.0);
                let outside = norm(o.map(|v| v.max(0.0)));
                outside + o[0].max(o[1]).max(o[2]).min(0.0)
            }
            Solid::Cylinder { .. } => {
                let dr = q[0].hypot(q[2]) - 1.0;
                let dy = q[1].abs() - 1.0;
                dr.max(0.0).hypot(dy.max(0.0)) + dr.max(dy).min(0.0)
            }
            Solid::Capsule { .. } => {
                let y = q[1].clamp(-0.5, 0.5);
                norm([q[0], q[1] - y, q[2]]) - 0.5
            }
        };
        d * min_s
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Polynomial smooth minimum.
fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

/// A primitive shape: one solid, or the smooth union of two.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub category: Category,
    pub solids: Vec<Solid>,
}

impl Primitive {
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        let mut it = self.solids.iter().map(|s| s.sdf(p));
        let first = it.next().unwrap_or(f64::INFINITY);
        it.fold(first, |a, b| smooth_min(a, b, BLEND))
    }

    /// Random primitive of the given category.
    pub fn sample(category: Category, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let solids = match category {
            Category::Ellipsoid => vec![Solid::Ellipsoid {
                center: [0.0; 3],
                scale: random_scale(&mut rng),
            }],
            Category::Box => vec![Solid::Box {
                center: [0.0; 3],
                scale: random_scale(&mut rng),
            }],
            Category::Cylinder => vec![Solid::Cylinder {
                center: [0.0; 3],
                scale: random_scale(&mut rng),
            }],
            Category::Capsule => vec![Solid::Capsule {
                center: [0.0; 3],
                scale: random_scale(&mut rng),
            }],
            Category::Composite => composite(&mut rng),
        };
        Self { category, solids }
    }

    /// Projects every vertex of icosphere(3) along its direction onto the
    /// outermost crossing of the surface.
    pub fn mesh(&self) -> Result<Mesh, DataError> {
        let template = icosphere(PRIMITIVE_LEVEL)?;
        let mut vertices = Vec::with_capacity(template.vertex_count());
        for v in template.vertices() {
            let dir = v.map(f64::from);
            let t = self.outer_radius(dir)?;
            vertices.push(dir.map(|d| (d * t) as f32));
        }
        Ok(Mesh::new(vertices, template.faces().to_vec())?)
    }

    fn outer_radius(&self, dir: [f64; 3]) -> Result<f64, DataError> {
        let at = |t: f64| self.sdf(dir.map(|d| d * t));
        if at(0.0) >= 0.0 {
            return Err(DataError::Primitive("origin is outside the shape".into()));
        }
        // march inward from outside to the first inside sample
        let step = RAY_MAX / RAY_STEPS as f64;
        let mut hi = RAY_MAX;
        if at(hi) <= 0.0 {
            return Err(DataError::Primitive(
                "shape exceeds the sampling radius".into(),
            ));
        }
        let mut lo = hi - step;
        while at(lo) > 0.0 {
            hi = lo;
            lo -= step;
        }
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (lo + hi);
            if at(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn random_scale(rng: &mut impl Rng) -> [f64; 3] {
    let (a, b) = SCALE_RANGE;
    [0; 3].map(|_| f64::from(rng.random_range(a..=b)))
}

/// Two solids smoothly blended; the second is smaller and offset along one
/// axis so that it overlaps the first.
fn composite(rng: &mut impl Rng) -> Vec<Solid> {
    let pick = |center: [f64; 3], scale: [f64; 3], kind: u32| match kind {
        0 => Solid::Ellipsoid { center, scale },
        1 => Solid::Box { center, scale },
        2 => Solid::Cylinder { center, scale },
        _ => Solid::Capsule { center, scale },
    };
    let base_kind = rng.random_range(0..4u32);
    let base_scale = random_scale(rng).map(|s| s * 0.75);
    let base = pick([0.0; 3], base_scale, base_kind);
    let part_kind = rng.random_range(0..4u32);
    let part_scale = random_scale(rng).map(|s| s * 0.5);
    let axis = rng.random_range(0..3usize);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut center = [0.0; 3];
    center[axis] = sign * part_scale[axis] * rng.random_range(0.3..0.6);
    let part = pick(center, part_scale, part_kind);
    vec![base, part]
}

/// Watertight mesh for a random primitive of `category`.
pub fn generate_primitive(category: Category, seed: u64) -> Result<Mesh, DataError> {
    Primitive::sample(category, seed).mesh()
}
