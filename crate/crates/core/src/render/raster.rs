use std::sync::Arc;

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::geometry::Mesh;
use crate::image::GrayImage;

use super::camera::{project_var, CameraPose, Projection};
use super::RenderError;

pub const DEFAULT_SIGMA: f32 = 1e-4;
/// Softness for binary masks: the falloff band is far below a pixel, so
/// thresholding at 0.5 reduces to a pixel-centre coverage test.
pub const HARD_SIGMA: f32 = 1e-7;
pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 512;
/// Faces farther than `sqrt(CULL_SHARPNESS * sigma)` from a pixel centre are
/// skipped; each contributes at most `exp(-CULL_SHARPNESS)` there.
const CULL_SHARPNESS: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub resolution: usize,
    /// Softness of the occupancy falloff in squared NDC units.
    pub sigma: f32,
    pub projection: Projection,
    /// Skip faces whose projection winds clockwise (or is degenerate). A
    /// closed, outward-wound mesh is covered by its front faces alone.
    pub cull_backfaces: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            sigma: DEFAULT_SIGMA,
            projection: Projection::Orthographic,
            cull_backfaces: false,
        }
    }
}

impl RenderConfig {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    /// Configuration for binary silhouettes.
    pub fn hard(resolution: usize) -> Self {
        Self {
            resolution,
            sigma: HARD_SIGMA,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(RenderError::InvalidConfig(format!(
                "resolution {} outside {MIN_RESOLUTION}..={MAX_RESOLUTION}",
                self.resolution
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(RenderError::InvalidConfig(format!(
                "sigma {} must be positive",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Square occupancy image, row-major with row 0 at the top (NDC y = +1).
#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    resolution: usize,
    values: Vec<f32>,
}

impl Silhouette {
    pub fn new(resolution: usize, values: Vec<f32>) -> Result<Self, RenderError> {
        if values.len() != resolution * resolution {
            return Err(RenderError::InvalidConfig(format!(
                "{} values for a {resolution}x{resolution} silhouette",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(RenderError::OutOfRange);
        }
        Ok(Self { resolution, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, RenderError> {
        match t.shape() {
            [r, c] if r == c => Self::new(*r, t.data().to_vec()),
            s => Err(RenderError::InvalidConfig(format!(
                "silhouette tensor shape {s:?}"
            ))),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.resolution + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.resolution, self.resolution], self.values.clone())
            .expect("square silhouette")
    }

    /// 1 where the value is at least `threshold`, else 0.
    pub fn hard_mask(&self, threshold: f32) -> Silhouette {
        Silhouette {
            resolution: self.resolution,
            values: self
                .values
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// 2x2 box filter; `None` for odd resolutions.
    pub fn downsample2(&self) -> Option<Silhouette> {
        if !self.resolution.is_multiple_of(2) {
            return None;
        }
        let r = self.resolution / 2;
        let mut values = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let s = self.get(2 * i, 2 * j)
                    + self.get(2 * i, 2 * j + 1)
                    + self.get(2 * i + 1, 2 * j)
                    + self.get(2 * i + 1, 2 * j + 1);
                values.push(s * 0.25);
            }
        }
        Some(Silhouette {
            resolution: r,
            values,
        })
    }

    pub fn to_image(&self) -> GrayImage {
        let px = self
            .values
            .iter()
            .map(|&v| (255.0 * v).round() as u8)
            .collect();
        GrayImage::new(self.resolution, self.resolution, px).expect("square image")
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        Ok(self.to_image().encode_png()?)
    }

    /// Reads a grayscale image as occupancy `value / 255`.
    pub fn from_image(img: &GrayImage) -> Result<Self, RenderError> {
        if img.width != img.height {
            return Err(RenderError::InvalidConfig(format!(
                "silhouette image is {}x{}",
                img.width, img.height
            )));
        }
        Self::new(
            img.width,
            img.pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
        )
    }
}

/// Centre of pixel `(row, col)` in NDC.
pub fn pixel_center(resolution: usize, row: usize, col: usize) -> [f64; 2] {
    let step = 2.0 / resolution as f64;
    [
        -1.0 + (col as f64 + 0.5) * step,
        1.0 - (row as f64 + 0.5) * step,
    ]
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct FaceGeom {
    p: [[f64; 2]; 3],
    /// +1 or -1 for counter-clockwise or clockwise projections, 0 if degenerate.
    orient: f64,
}

impl FaceGeom {
    fn new(ndc: &[f32], f: [u32; 3]) -> Self {
        let p = f.map(|i| {
            [
                f64::from(ndc[2 * i as usize]),
                f64::from(ndc[2 * i as usize + 1]),
            ]
        });
        let area =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        Self {
            p,
            orient: area.signum() * f64::from(area != 0.0),
        }
    }

    fn pixel_range(&self, res: usize, margin: f64) -> Option<(usize, usize, usize, usize)> {
        let xs = self.p.map(|q| q[0]);
        let ys = self.p.map(|q| q[1]);
        let xmin = xs.iter().copied().fold(f64::INFINITY, f64::min) - margin;
        let xmax = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + margin;
        let ymin = ys.iter().copied().fold(f64::INFINITY, f64::min) - margin;
        let ymax = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) + margin;
        let half = res as f64 / 2.0;
        // col centre x = -1 + (c + 0.5) / half, row centre y = 1 - (r + 0.5) / half
        let c0 = ((xmin + 1.0) * half - 0.5).ceil().max(0.0);
        let c1 = ((xmax + 1.0) * half - 0.5).floor().min(res as f64 - 1.0);
        let r0 = ((1.0 - ymax) * half - 0.5).ceil().max(0.0);
        let r1 = ((1.0 - ymin) * half - 0.5).floor().min(res as f64 - 1.0);
        if c1 < c0 || r1 < r0 {
            return None;
        }
        Some((r0 as usize, r1 as usize, c0 as usize, c1 as usize))
    }

    /// Signed squared distance to the triangle boundary (positive inside), and
    /// its gradient with respect to the three projected vertices.
    fn signed_dist2(&self, q: [f64; 2]) -> (f64, [[f64; 2]; 3]) {
        let mut best = f64::INFINITY;
        let mut grad = [[0.0; 2]; 3];
        let mut inside = self.orient != 0.0;
        for k in 0..3 {
            let (ia, ib) = (k, (k + 1) % 3);
            let (a, b) = (self.p[ia], self.p[ib]);
            let e = [b[0] - a[0], b[1] - a[1]];
            let w = [q[0] - a[0], q[1] - a[1]];
            let cross = e[0] * w[1] - e[1] * w[0];
            if cross * self.orient < 0.0 {
                inside = false;
            }
            let len2 = e[0] * e[0] + e[1] * e[1];
            let t = if len2 > 0.0 {
                ((w[0] * e[0] + w[1] * e[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let r = [w[0] - t * e[0], w[1] - t * e[1]];
            let d2 = r[0] * r[0] + r[1] * r[1];
            if d2 < best {
                best = d2;
                grad = [[0.0; 2]; 3];
                grad[ia] = [-2.0 * r[0] * (1.0 - t), -2.0 * r[1] * (1.0 - t)];
                grad[ib] = [-2.0 * r[0] * t, -2.0 * r[1] * t];
            }
        }
        if inside {
            (best, grad)
        } else {
            (-best, grad.map(|g| g.map(|x| -x)))
        }
    }
}

/// Occupancy `1 - prod_f (1 - sigmoid(delta_f d_f^2 / sigma))` at each pixel
/// for triangles given by `[V, 2]` NDC positions.
///
/// The product is accumulated as a sum of `log(1 - D_f) = -softplus(x_f)`,
/// which stays finite when individual factors round to zero.
struct SoftRaster {
    faces: Arc<Vec<[u32; 3]>>,
    resolution: usize,
    sigma: f64,
    cull_backfaces: bool,
    log_empty: Vec<f64>,
}

impl SoftRaster {
    fn margin(&self) -> f64 {
        (CULL_SHARPNESS * self.sigma).sqrt()
    }

    fn forward(faces: Arc<Vec<[u32; 3]>>, ndc: &[f32], cfg: &RenderConfig) -> (Self, Vec<f32>) {
        let (resolution, sigma) = (cfg.resolution, f64::from(cfg.sigma));
        let mut op = Self {
            faces,
            resolution,
            sigma,
            cull_backfaces: cfg.cull_backfaces,
            log_empty: vec![0.0; resolution * resolution],
        };
        let margin = op.margin();
        for &f in op.faces.iter() {
            let geom = FaceGeom::new(ndc, f);
            if op.cull_backfaces && geom.orient <= 0.0 {
                continue;
            }
            let Some((r0, r1, c0, c1)) = geom.pixel_range(resolution, margin) else {
                continue;
            };
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let (sd2, _) = geom.signed_dist2(pixel_center(resolution, row, col));
                    op.log_empty[row * resolution + col] -= softplus(sd2 / sigma);
                }
            }
        }
        let values = op.log_empty.iter().map(|&l| (-l.exp_m1()) as f32).collect();
        (op, values)
    }
}

impl CustomOp for SoftRaster {
    fn name(&self) -> &'static str {
        "soft_silhouette"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let ndc = inputs[0].data();
        let res = self.resolution;
        let g = grad.data();
        let mut out = vec![0.0f64; ndc.len()];
        let margin = self.margin();
        for &f in self.faces.iter() {
            let geom = FaceGeom::new(ndc, f);
            if self.cull_backfaces && geom.orient <= 0.0 {
                continue;
            }
            let Some((r0, r1, c0, c1)) = geom.pixel_range(res, margin) else {
                continue;
            };
            let mut acc = [[0.0f64; 2]; 3];
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let idx = row * res + col;
                    if g[idx] == 0.0 {
                        continue;
                    }
                    let (sd2, dgrad) = geom.signed_dist2(pixel_center(res, row, col));
                    let x = sd2 / self.sigma;
                    // dS/dx = prod_{g != f}(1 - D_g) * D_f (1 - D_f)
                    let ds_dx = (self.log_empty[idx] - softplus(-x)).exp();
                    let coef = f64::from(g[idx]) * ds_dx / self.sigma;
                    for k in 0..3 {
                        acc[k][0] += coef * dgrad[k][0];
                        acc[k][1] += coef * dgrad[k][1];
                    }
                }
            }
            for k in 0..3 {
                let v = f[k] as usize;
                out[2 * v] += acc[k][0];
                out[2 * v + 1] += acc[k][1];
            }
        }
        let data = out.into_iter().map(|x| x as f32).collect();
        vec![Some(
            Tensor::new(inputs[0].shape().to_vec(), data).expect("ndc grad shape"),
        )]
    }
}

/// Records the soft silhouette of triangles over `[V, 2]` NDC positions.
pub fn rasterize_var(
    tape: &mut Tape,
    ndc: Var,
    faces: &Arc<Vec<[u32; 3]>>,
    cfg: &RenderConfig,
) -> Result<Var, RenderError> {
    cfg.validate()?;
    let value = tape.value(ndc)?;
    let nv = match value.shape() {
        [n, 2] => *n,
        s => {
            return Err(RenderError::InvalidConfig(format!(
                "ndc tensor shape {s:?}"
            )))
        }
    };
    if !value.is_finite() {
        return Err(RenderError::NonFinite);
    }
    if let Some(bad) = faces.iter().flatten().find(|&&i| i as usize >= nv) {
        return Err(RenderError::InvalidConfig(format!(
            "face index {bad} out of range"
        )));
    }
    let (op, values) = SoftRaster::forward(Arc::clone(faces), value.data(), cfg);
    let out = Tensor::new([cfg.resolution, cfg.resolution], values)?;
    Ok(tape.custom(&[ndc], out, Box::new(op))?)
}

/// Differentiable render of `[V, 3]` vertices with fixed faces.
pub fn soft_silhouette_var(
    tape: &mut Tape,
    vertices: Var,
    faces: &Arc<Vec<[u32; 3]>>,
    pose: CameraPose,
    cfg: &RenderConfig,
) -> Result<Var, RenderError> {
    if !tape.value(vertices)?.is_finite() {
        return Err(RenderError::NonFinite);
    }
    let ndc = project_var(tape, vertices, pose, cfg.projection)?;
    rasterize_var(tape, ndc, faces, cfg)
}

pub fn soft_silhouette(
    mesh: &Mesh,
    pose: CameraPose,
    cfg: &RenderConfig,
) -> Result<Silhouette, RenderError> {
    cfg.validate()?;
    if !mesh.is_finite() {
        return Err(RenderError::NonFinite);
    }
    let proj = super::camera::project(mesh, pose, cfg.projection)?;
    let ndc: Vec<f32> = proj.ndc.iter().flatten().copied().collect();
    let faces = Arc::new(mesh.faces().to_vec());
    let (_, values) = SoftRaster::forward(faces, &ndc, cfg);
    Silhouette::new(cfg.resolution, values)
}

pub fn hard_mask(s: &Silhouette, threshold: f32) -> Silhouette {
    s.hard_mask(threshold)
}

/// Binary silhouette rendered with [`RenderConfig::hard`].
pub fn render_mask(
    mesh: &Mesh,
    pose: CameraPose,
    resolution: usize,
) -> Result<Silhouette, RenderError> {
    Ok(soft_silhouette(mesh, pose, &RenderConfig::hard(resolution))?.hard_mask(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_indices, GradCheckConfig};
    use crate::geometry::icosphere;
    use crate::render::camera::{canonical_pose, sample_poses, D0, VIEW_HALF_EXTENT};

    /// Direct evaluation of the occupancy formula over every face, with an
    /// independent point-to-segment distance and barycentric inside test.
    fn reference(
        ndc: &[[f64; 2]],
        faces: &[[u32; 3]],
        res: usize,
        sigma: f64,
        front_only: bool,
    ) -> Vec<f64> {
        let seg = |p: [f64; 2], a: [f64; 2], b: [f64; 2]| {
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let l2 = ex * ex + ey * ey;
            let t = (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / l2).clamp(0.0, 1.0);
            let (cx, cy) = (a[0] + t * ex, a[1] + t * ey);
            ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
        };
        let mut out = Vec::new();
        for row in 0..res {
            for col in 0..res {
                let p = pixel_center(res, row, col);
                let mut empty = 1.0;
                for f in faces {
                    let [a, b, c] = f.map(|i| ndc[i as usize]);
                    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
                    if front_only && det <= 0.0 {
                        continue;
                    }
                    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
                    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
                    let inside = l1 >= 0.0 && l2 >= 0.0 && 1.0 - l1 - l2 >= 0.0;
                    let d = seg(p, a, b).min(seg(p, b, c)).min(seg(p, c, a));
                    let delta = if inside { 1.0 } else { -1.0 };
                    let dval = 1.0 / (1.0 + (-delta * d * d / sigma).exp());
                    empty *= 1.0 - dval;
                }
                out.push(1.0 - empty);
            }
        }
        out
    }

    fn ndc_of(mesh: &Mesh, pose: CameraPose) -> Vec<[f64; 2]> {
        super::super::camera::project(mesh, pose, Projection::Orthographic)
            .unwrap()
            .ndc
            .iter()
            .map(|p| p.map(f64::from))
            .collect()
    }

    #[test]
    fn matches_direct_formula_without_culling() {
        let mesh = icosphere(1).unwrap();
        for (pose, sigma, cull_backfaces) in [
            (canonical_pose(), 1e-3f32, true),
            (sample_poses(5, 1)[0], 1e-2, true),
            (sample_poses(6, 1)[0], 1e-2, false),
        ] {
            let cfg = RenderConfig {
                resolution: 16,
                sigma,
                cull_backfaces,
                ..RenderConfig::default()
            };
            let got = soft_silhouette(&mesh, pose, &cfg).unwrap();
            let want = reference(
                &ndc_of(&mesh, pose),
                mesh.faces(),
                16,
                f64::from(sigma),
                cull_backfaces,
            );
            for (g, w) in got.values().iter().zip(&want) {
                assert!((f64::from(*g) - w).abs() < 1e-6, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn culling_changes_values_by_at_most_1e6() {
        let mesh = icosphere(2).unwrap();
        let pose = sample_poses(11, 1)[0];
        for cull_backfaces in [true, false] {
            let cfg = RenderConfig {
                resolution: 32,
                cull_backfaces,
                ..RenderConfig::default()
            };
            let got = soft_silhouette(&mesh, pose, &cfg).unwrap();
            let want = reference(
                &ndc_of(&mesh, pose),
                mesh.faces(),
                32,
                f64::from(cfg.sigma),
                cull_backfaces,
            );
            let worst = got
                .values()
                .iter()
                .zip(&want)
                .map(|(g, w)| (f64::from(*g) - w).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-6, "{worst}");
        }
    }

    fn single_triangle(ndc: [[f32; 2]; 3]) -> (Tensor, Arc<Vec<[u32; 3]>>) {
        let t = Tensor::new([3, 2], ndc.iter().flatten().copied().collect()).unwrap();
        (t, Arc::new(vec![[0, 1, 2]]))
    }

    #[test]
    fn edge_pixel_is_half_and_deep_pixel_saturates() {
        // 8x8: pixel (row 3, col 4) has centre (0.125, 0.125)
        let (t, faces) = single_triangle([[0.125, -2.0], [3.0, 0.125], [0.125, 3.0]]);
        let cfg = RenderConfig {
            resolution: 8,
            ..RenderConfig::default()
        };
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let s = rasterize_var(&mut tape, v, &faces, &cfg).unwrap();
        let s = tape.value(s).unwrap();
        assert_eq!(s.data()[3 * 8 + 4], 0.5);
        assert_eq!(s.data()[3 * 8 + 6], 1.0);
        assert_eq!(s.data()[3 * 8 + 1], 0.0);
    }

    #[test]
    fn winding_does_not_matter() {
        let (a, faces) = single_triangle([[-0.5, -0.5], [0.6, -0.4], [0.1, 0.7]]);
        let (b, _) = single_triangle([[-0.5, -0.5], [0.1, 0.7], [0.6, -0.4]]);
        let cfg = RenderConfig {
            resolution: 16,
            cull_backfaces: false,
            ..RenderConfig::default()
        };
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let sa = rasterize_var(&mut tape, va, &faces, &cfg).unwrap();
        let sb = rasterize_var(&mut tape, vb, &faces, &cfg).unwrap();
        assert_eq!(tape.value(sa).unwrap(), tape.value(sb).unwrap());
    }

    #[test]
    fn values_in_unit_interval_and_hard_mask() {
        let s = soft_silhouette(
            &icosphere(2).unwrap(),
            sample_poses(1, 1)[0],
            &RenderConfig::default(),
        )
        .unwrap();
        assert!(s.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let hi = Silhouette::new(8, vec![0.9; 64]).unwrap();
        let lo = Silhouette::new(8, vec![0.1; 64]).unwrap();
        assert!(hard_mask(&hi, 0.5).values().iter().all(|&v| v == 1.0));
        assert!(hard_mask(&lo, 0.5).values().iter().all(|&v| v == 0.0));
        assert!(Silhouette::new(8, vec![1.5; 64]).is_err());
    }

    #[test]
    fn sphere_matches_analytic_disk() {
        let sphere = icosphere(3).unwrap();
        let radius = 1.0 / f64::from(VIEW_HALF_EXTENT);
        let disk_iou = |mask: &Silhouette| {
            let (mut inter, mut union) = (0, 0);
            for row in 0..64 {
                for col in 0..64 {
                    let [x, y] = pixel_center(64, row, col);
                    let disk = x * x + y * y <= radius * radius;
                    let m = mask.get(row, col) == 1.0;
                    inter += usize::from(disk && m);
                    union += usize::from(disk || m);
                }
            }
            inter as f64 / union as f64
        };
        let hard = render_mask(&sphere, canonical_pose(), 64).unwrap();
        assert!(disk_iou(&hard) >= 0.98, "{}", disk_iou(&hard));
        // the default falloff widens the 0.5 level set by a fraction of a pixel
        let soft = soft_silhouette(
            &sphere,
            canonical_pose(),
            &RenderConfig::with_resolution(64),
        )
        .unwrap()
        .hard_mask(0.5);
        assert!(disk_iou(&soft) > 0.93);
        for (h, s) in hard.values().iter().zip(soft.values()) {
            assert!(s >= h);
        }
    }

    #[test]
    fn perspective_sphere_radius() {
        let cfg = RenderConfig {
            projection: Projection::Perspective,
            ..RenderConfig::hard(128)
        };
        let s = soft_silhouette(&icosphere(4).unwrap(), canonical_pose(), &cfg).unwrap();
        let px = s
            .hard_mask(0.5)
            .values()
            .iter()
            .filter(|&&v| v == 1.0)
            .count() as f64;
        let area_ndc = px * (2.0 / 128.0f64).powi(2);
        let measured = (area_ndc / std::f64::consts::PI).sqrt();
        // tangent cone half-angle asin(1/d) seen through focal length d0 / half
        let d = f64::from(D0);
        let analytic = (1.0 / d).asin().tan() * d / f64::from(VIEW_HALF_EXTENT);
        assert!(
            (measured - analytic).abs() / analytic < 0.01,
            "{measured} vs {analytic}"
        );
    }

    #[test]
    fn rotation_consistency() {
        let sphere = icosphere(2).unwrap();
        let squashed = sphere
            .vertices()
            .iter()
            .map(|v| [v[0] + 0.2, 0.7 * v[1], 0.45 * v[2] - 0.1])
            .collect();
        let mesh = Mesh::new(squashed, sphere.faces().to_vec()).unwrap();
        let cfg = RenderConfig::with_resolution(32);
        for (az, delta) in [(0.0f32, 37.0f32), (100.0, -65.0), (250.0, 90.0)] {
            let (s, c) = (
                f64::from(delta).to_radians().sin(),
                f64::from(delta).to_radians().cos(),
            );
            // rotate the mesh by -delta about +y
            let rotated = Mesh::new(
                mesh.vertices()
                    .iter()
                    .map(|v| {
                        let (x, z) = (f64::from(v[0]), f64::from(v[2]));
                        [(c * x - s * z) as f32, v[1], (s * x + c * z) as f32]
                    })
                    .collect(),
                mesh.faces().to_vec(),
            )
            .unwrap();
            let a =
                soft_silhouette(&rotated, CameraPose::new(az, 15.0, D0).unwrap(), &cfg).unwrap();
            let b = soft_silhouette(&mesh, CameraPose::new(az + delta, 15.0, D0).unwrap(), &cfg)
                .unwrap();
            let worst = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f32::max);
            assert!(worst <= 1e-5, "az {az} delta {delta}: {worst}");
        }
    }

    #[test]
    fn downsample_consistency() {
        let mesh = icosphere(3).unwrap();
        for pose in sample_poses(8, 3) {
            let hi = soft_silhouette(&mesh, pose, &RenderConfig::with_resolution(64)).unwrap();
            let lo = soft_silhouette(&mesh, pose, &RenderConfig::with_resolution(32)).unwrap();
            let pooled = hi.downsample2().unwrap();
            let mae: f32 = pooled
                .values()
                .iter()
                .zip(lo.values())
                .map(|(a, b)| (a - b).abs())
                .sum::<f32>()
                / 1024.0;
            assert!(mae <= 0.05, "{mae}");
        }
    }

    #[test]
    fn pixel_gradient_matches_finite_differences() {
        let mesh = icosphere(1).unwrap();
        let faces = Arc::new(mesh.faces().to_vec());
        let cfg = RenderConfig {
            resolution: 16,
            sigma: 2e-3,
            ..RenderConfig::default()
        };
        let pose = sample_poses(21, 1)[0];
        let base = soft_silhouette(&mesh, pose, &cfg).unwrap();
        // a boundary pixel where the falloff is steep but not saturated
        let pixel = (0..256)
            .min_by(|&a, &b| {
                let (va, vb) = (base.values()[a], base.values()[b]);
                (va - 0.5).abs().total_cmp(&(vb - 0.5).abs())
            })
            .unwrap();
        let f = |tape: &mut Tape, v: Var| {
            let s = soft_silhouette_var(tape, v, &faces, pose, &cfg)
                .map_err(|e| crate::TensorError::InvalidArgument(e.to_string()))?;
            let flat = tape.reshape(s, &[256])?;
            tape.slice(flat, 0, pixel, pixel + 1)
                .and_then(|p| tape.sum_all(p))
        };
        let gc = GradCheckConfig {
            step: 1e-4,
            tolerance: 5e-3,
            ..GradCheckConfig::default()
        };
        let report =
            grad_check_indices(f, &mesh.vertex_tensor(), &(0..36).collect::<Vec<_>>(), &gc)
                .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn png_values_are_rounded() {
        let s = Silhouette::new(8, (0..64).map(|i| i as f32 / 63.0).collect()).unwrap();
        let img = s.to_image();
        for (p, v) in img.pixels.iter().zip(s.values()) {
            assert_eq!(*p, (255.0 * v).round() as u8);
        }
        let back = Silhouette::from_image(
            &crate::image::GrayImage::decode_png(&s.to_png().unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back.resolution(), 8);
    }

    #[test]
    fn rejects_bad_config_and_non_finite() {
        let m = icosphere(0).unwrap();
        assert!(soft_silhouette(&m, canonical_pose(), &RenderConfig::with_resolution(4)).is_err());
        let cfg = RenderConfig {
            sigma: 0.0,
            ..RenderConfig::default()
        };
        assert!(soft_silhouette(&m, canonical_pose(), &cfg).is_err());
        let mut v = m.vertices().to_vec();
        v[0][1] = f32::NAN;
        let bad = Mesh::new(v, m.faces().to_vec()).unwrap();
        assert_eq!(
            soft_silhouette(&bad, canonical_pose(), &RenderConfig::default()),
            Err(RenderError::NonFinite)
        );
    }
}
