use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::geometry::Mesh;

use super::RenderError;

/// Camera distance used for every pose.
pub const D0: f32 = 2.5;
/// Half-width of the orthographic view volume in model units. Perspective
/// projection uses the focal length that matches it on the plane through the
/// origin.
pub const VIEW_HALF_EXTENT: f32 = 1.75;
pub const AZIMUTH_RANGE: (f32, f32) = (0.0, 360.0);
pub const ELEVATION_RANGE: (f32, f32) = (-20.0, 40.0);
const NEAR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Degrees about +y, measured from +z toward +x.
    pub azimuth: f32,
    /// Degrees above the xz-plane.
    pub elevation: f32,
    pub distance: f32,
}

impl CameraPose {
    pub fn new(azimuth: f32, elevation: f32, distance: f32) -> Result<Self, RenderError> {
        let pose = Self {
            azimuth,
            elevation,
            distance,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !self.azimuth.is_finite()
            || !self.elevation.is_finite()
            || !(self.distance > 0.0)
            || !self.distance.is_finite()
        {
            return Err(RenderError::InvalidPose(*self));
        }
        if self.elevation.abs() >= 90.0 {
            return Err(RenderError::InvalidPose(*self));
        }
        Ok(())
    }

    pub fn eye(&self) -> [f64; 3] {
        let (az, el, d) = (
            f64::from(self.azimuth).to_radians(),
            f64::from(self.elevation).to_radians(),
            f64::from(self.distance),
        );
        [
            d * el.cos() * az.sin(),
            d * el.sin(),
            d * el.cos() * az.cos(),
        ]
    }

    /// Right, up and forward axes of a right-handed look-at toward the origin
    /// with world +y as the up hint.
    pub fn basis(&self) -> [[f64; 3]; 3] {
        let (az, el) = (
            f64::from(self.azimuth).to_radians(),
            f64::from(self.elevation).to_radians(),
        );
        let forward = [-el.cos() * az.sin(), -el.sin(), -el.cos() * az.cos()];
        let right = [az.cos(), 0.0, -az.sin()];
        let up = [
            right[1] * forward[2] - right[2] * forward[1],
            right[2] * forward[0] - right[0] * forward[2],
            right[0] * forward[1] - right[1] * forward[0],
        ];
        [right, up, forward]
    }
}

pub fn canonical_pose() -> CameraPose {
    CameraPose {
        azimuth: 0.0,
        elevation: 0.0,
        distance: D0,
    }
}

pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R) -> CameraPose {
    CameraPose {
        azimuth: rng.random_range(AZIMUTH_RANGE.0..AZIMUTH_RANGE.1),
        elevation: rng.random_range(ELEVATION_RANGE.0..=ELEVATION_RANGE.1),
        distance: D0,
    }
}

pub fn sample_poses(seed: u64, n: usize) -> Vec<CameraPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_pose(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Projection {
    #[default]
    Orthographic,
    Perspective,
}

impl std::str::FromStr for Projection {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ortho" | "orthographic" => Ok(Projection::Orthographic),
            "persp" | "perspective" => Ok(Projection::Perspective),
            other => Err(RenderError::InvalidConfig(format!(
                "unknown projection `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Projection::Orthographic => "orthographic",
            Projection::Perspective => "perspective",
        })
    }
}

/// Projected vertices: NDC positions and view-space depth along the viewing
/// direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub ndc: Vec<[f32; 2]>,
    pub depth: Vec<f32>,
}

pub fn project(
    mesh: &Mesh,
    pose: CameraPose,
    projection: Projection,
) -> Result<Projected, RenderError> {
    pose.validate()?;
    let [r, u, f] = pose.basis();
    let d = f64::from(pose.distance);
    let half = f64::from(VIEW_HALF_EXTENT);
    let mut ndc = Vec::with_capacity(mesh.vertex_count());
    let mut depth = Vec::with_capacity(mesh.vertex_count());
    for (i, v) in mesh.vertices().iter().enumerate() {
        let p = v.map(f64::from);
        if !p.iter().all(|x| x.is_finite()) {
            return Err(RenderError::NonFinite);
        }
        let dot = |a: [f64; 3]| a[0] * p[0] + a[1] * p[1] + a[2] * p[2];
        let z = dot(f) + d;
        let scale = match projection {
            Projection::Orthographic => 1.0 / half,
            Projection::Perspective => {
                if z <= NEAR {
                    return Err(RenderError::BehindCamera { vertex: i });
                }
                f64::from(D0) / (half * z)
            }
        };
        ndc.push([(dot(r) * scale) as f32, (dot(u) * scale) as f32]);
        depth.push(z as f32);
    }
    Ok(Projected { ndc, depth })
}

/// Differentiable projection of `[V, 3]` vertices to `[V, 2]` NDC.
pub fn project_var(
    tape: &mut Tape,
    vertices: Var,
    pose: CameraPose,
    projection: Projection,
) -> Result<Var, RenderError> {
    pose.validate()?;
    let [r, u, f] = pose.basis();
    let half = f64::from(VIEW_HALF_EXTENT);
    let axes = Tensor::from_fn([3, 2], |i| {
        let (row, col) = (i / 2, i % 2);
        (if col == 0 { r[row] } else { u[row] } / half) as f32
    });
    let axes = tape.constant(axes);
    let xy = tape.matmul(vertices, axes)?;
    match projection {
        Projection::Orthographic => Ok(xy),
        Projection::Perspective => {
            let fwd = tape.constant(Tensor::from_fn([3, 1], |i| f[i] as f32));
            let z = tape.matmul(vertices, fwd)?;
            let z = tape.shift(z, pose.distance)?;
            if let Some(i) = tape
                .value(z)?
                .data()
                .iter()
                .position(|&z| f64::from(z) <= NEAR)
            {
                return Err(RenderError::BehindCamera { vertex: i });
            }
            let inv = tape.pow(z, -1.0)?;
            let inv = tape.scale(inv, D0)?;
            Ok(tape.mul(xy, inv)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    fn mesh_of(vertices: Vec<[f32; 3]>) -> Mesh {
        Mesh::new(vertices, vec![]).unwrap()
    }

    #[test]
    fn canonical_is_constant() {
        let p = canonical_pose();
        assert_eq!(p.azimuth, 0.0);
        assert_eq!(p.elevation, 0.0);
        assert_eq!(p, canonical_pose());
    }

    #[test]
    fn basis_is_orthonormal_and_right_handed() {
        for pose in sample_poses(3, 20) {
            let [r, u, f] = pose.basis();
            let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            for (a, b) in [(r, u), (r, f), (u, f)] {
                assert!(dot(a, b).abs() < 1e-12);
            }
            for a in [r, u, f] {
                assert!((dot(a, a) - 1.0).abs() < 1e-12);
            }
            // r x u = -f for a camera looking down its own -z
            let c = [
                r[1] * u[2] - r[2] * u[1],
                r[2] * u[0] - r[0] * u[2],
                r[0] * u[1] - r[1] * u[0],
            ];
            assert!((dot(c, f) + 1.0).abs() < 1e-12);
            let eye = pose.eye();
            assert!((dot(eye, f) + f64::from(pose.distance)).abs() < 1e-9);
        }
    }

    #[test]
    fn origin_projects_to_centre() {
        let m = mesh_of(vec![[0.0; 3]]);
        for pose in sample_poses(9, 8) {
            for proj in [Projection::Orthographic, Projection::Perspective] {
                let p = project(&m, pose, proj).unwrap();
                assert!(p.ndc[0][0].abs() < 1e-7 && p.ndc[0][1].abs() < 1e-7);
                assert!((p.depth[0] - D0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn half_turn_negates_x() {
        let m = mesh_of(vec![[0.3, 0.2, -0.4], [-0.7, -0.1, 0.9]]);
        let a = project(
            &m,
            CameraPose::new(30.0, 0.0, D0).unwrap(),
            Projection::Orthographic,
        )
        .unwrap();
        let b = project(
            &m,
            CameraPose::new(210.0, 0.0, D0).unwrap(),
            Projection::Orthographic,
        )
        .unwrap();
        for (p, q) in a.ndc.iter().zip(&b.ndc) {
            assert!((p[0] + q[0]).abs() < 1e-6);
            assert!((p[1] - q[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn canonical_axes() {
        let m = mesh_of(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let p = project(&m, canonical_pose(), Projection::Orthographic).unwrap();
        let s = 1.0 / VIEW_HALF_EXTENT;
        assert!((p.ndc[0][0] - s).abs() < 1e-7 && p.ndc[0][1].abs() < 1e-7);
        assert!(p.ndc[1][0].abs() < 1e-7 && (p.ndc[1][1] - s).abs() < 1e-7);
        assert!(p.ndc[2][0].abs() < 1e-7 && p.ndc[2][1].abs() < 1e-7);
        assert!((p.depth[2] - (D0 - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn behind_camera_is_an_error_in_perspective_only() {
        let m = mesh_of(vec![[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]]);
        let pose = canonical_pose();
        assert_eq!(
            project(&m, pose, Projection::Perspective),
            Err(RenderError::BehindCamera { vertex: 1 })
        );
        assert!(project(&m, pose, Projection::Orthographic).is_ok());
        let mut tape = Tape::new();
        let v = tape.leaf(m.vertex_tensor());
        assert!(matches!(
            project_var(&mut tape, v, pose, Projection::Perspective),
            Err(RenderError::BehindCamera { vertex: 1 })
        ));
    }

    #[test]
    fn taped_projection_matches_direct() {
        let m = icosphere(2).unwrap().translated([0.1, -0.2, 0.3]);
        for pose in sample_poses(4, 5) {
            for proj in [Projection::Orthographic, Projection::Perspective] {
                let direct = project(&m, pose, proj).unwrap();
                let mut tape = Tape::new();
                let v = tape.leaf(m.vertex_tensor());
                let ndc = project_var(&mut tape, v, pose, proj).unwrap();
                let got = tape.value(ndc).unwrap().data();
                for (g, d) in got.chunks(2).zip(&direct.ndc) {
                    assert!((g[0] - d[0]).abs() < 1e-5 && (g[1] - d[1]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let a = sample_poses(17, 100);
        assert_eq!(a, sample_poses(17, 100));
        assert_ne!(a, sample_poses(18, 100));
        assert_eq!(sample_poses(1, 2).len(), 2);
        for p in &a {
            assert!((0.0..360.0).contains(&p.azimuth));
            assert!((-20.0..=40.0).contains(&p.elevation));
            assert_eq!(p.distance, D0);
        }
    }

    #[test]
    fn azimuth_histogram_is_uniform() {
        // chi-squared with 36 bins; critical value for 35 dof at alpha 0.01
        let poses = sample_poses(2024, 10_000);
        let mut bins = [0usize; 36];
        for p in &poses {
            bins[(p.azimuth / 10.0) as usize] += 1;
        }
        let expected = 10_000.0 / 36.0;
        let chi2: f64 = bins
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 57.342, "chi2 = {chi2}");
    }

    #[test]
    fn invalid_poses() {
        assert!(CameraPose::new(0.0, 0.0, 0.0).is_err());
        assert!(CameraPose::new(f32::NAN, 0.0, 1.0).is_err());
        assert!(CameraPose::new(0.0, 90.0, 1.0).is_err());
    }
}
