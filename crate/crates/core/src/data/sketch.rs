use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::geometry::Mesh;
use crate::image::GrayImage;
use crate::render::{render_mask, CameraPose, Silhouette};

use super::DataError;

pub const STROKE: u8 = 0;
pub const BACKGROUND: u8 = 1;
/// Chance that a boundary pixel gets a displaced second copy.
const THICKEN_PROB: f64 = 0.6;
pub const MAX_CORRUPTION_ATTEMPTS: usize = 1000;

/// Square binary sketch, row-major, 0 = stroke and 1 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchImage {
    resolution: usize,
    pixels: Vec<u8>,
}

impl SketchImage {
    pub fn new(resolution: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if resolution == 0 || pixels.len() != resolution * resolution {
            return Err(DataError::InvalidSketch(format!(
                "{} pixels for resolution {resolution}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(DataError::NonBinary);
        }
        Ok(Self { resolution, pixels })
    }

    pub fn blank(resolution: usize) -> Self {
        Self {
            resolution,
            pixels: vec![BACKGROUND; resolution * resolution],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.resolution + col]
    }

    pub fn is_stroke(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == STROKE
    }

    pub fn stroke_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == STROKE).count()
    }

    /// `[R, R]` tensor with the same 0 = stroke convention.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [self.resolution, self.resolution],
            self.pixels.iter().map(|&p| f32::from(p)).collect(),
        )
        .expect("square sketch")
    }

    /// Stroke pixels become black (0), background white (255).
    pub fn to_image(&self) -> GrayImage {
        let px = self.pixels.iter().map(|&p| p * 255).collect();
        GrayImage::new(self.resolution, self.resolution, px).expect("square sketch")
    }

    pub fn to_png(&self) -> Result<Vec<u8>, DataError> {
        Ok(self.to_image().encode_png()?)
    }

    /// Strict import: every pixel must be 0 or 255. The image is resampled to
    /// `resolution` with nearest neighbour.
    pub fn from_binary_image(img: &GrayImage, resolution: usize) -> Result<Self, DataError> {
        if img.pixels.iter().any(|&p| p != 0 && p != 255) {
            return Err(DataError::NonBinary);
        }
        Self::from_image(img, resolution)
    }

    /// Nearest-neighbour resample to `resolution`, then binarize at 0.5.
    pub fn from_image(img: &GrayImage, resolution: usize) -> Result<Self, DataError> {
        if resolution == 0 {
            return Err(DataError::InvalidSketch("zero resolution".into()));
        }
        let img = img.resize_nearest(resolution, resolution);
        let pixels = img
            .pixels
            .iter()
            .map(|&p| if p >= 128 { BACKGROUND } else { STROKE })
            .collect();
        Self::new(resolution, pixels)
    }

    pub fn from_png(bytes: &[u8], resolution: usize) -> Result<Self, DataError> {
        Self::from_image(&GrayImage::decode_png(bytes)?, resolution)
    }
}

/// Pixels inside the mask with at least one 4-neighbour outside it; the
/// image border counts as outside.
pub fn boundary_pixels(mask: &Silhouette) -> Vec<(usize, usize)> {
    let r = mask.resolution();
    let inside = |i: isize, j: isize| {
        i >= 0
            && j >= 0
            && (i as usize) < r
            && (j as usize) < r
            && mask.get(i as usize, j as usize) >= 0.5
    };
    let mut out = Vec::new();
    for i in 0..r as isize {
        for j in 0..r as isize {
            if inside(i, j)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(di, dj)| !inside(i + di, j + dj))
            {
                out.push((i as usize, j as usize));
            }
        }
    }
    out
}

/// Line drawing of a mesh: the silhouette boundary at `pose`, thickened to
/// one or two pixels by randomly displaced copies of its pixels.
pub fn synthesize_sketch(
    mesh: &Mesh,
    pose: CameraPose,
    seed: u64,
    resolution: usize,
) -> Result<SketchImage, DataError> {
    let mask = render_mask(mesh, pose, resolution)?;
    sketch_from_mask(&mask, seed)
}

pub fn sketch_from_mask(mask: &Silhouette, seed: u64) -> Result<SketchImage, DataError> {
    let r = mask.resolution();
    let boundary = boundary_pixels(mask);
    if boundary.is_empty() {
        return Err(DataError::EmptySilhouette);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sketch = SketchImage::blank(r);
    for &(i, j) in &boundary {
        sketch.pixels[i * r + j] = STROKE;
        if rng.random_bool(THICKEN_PROB) {
            let (di, dj) = [(-1, 0), (1, 0), (0, -1), (0, 1)][rng.random_range(0..4)];
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni >= 0 && nj >= 0 && (ni as usize) < r && (nj as usize) < r {
                sketch.pixels[ni as usize * r + nj as usize] = STROKE;
            }
        }
    }
    Ok(sketch)
}

/// Removal target for the partial-sketch protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub seed: u64,
    pub lo: f64,
    pub hi: f64,
}

impl CorruptionSpec {
    pub fn new(seed: u64, lo: f64, hi: f64) -> Result<Self, DataError> {
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(DataError::InvalidCorruption { lo, hi });
        }
        Ok(Self { seed, lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row..self.row + self.height).contains(&row)
            && (self.col..self.col + self.width).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub sketch: SketchImage,
    pub rect: Rect,
    pub removed_fraction: f64,
    pub attempts: usize,
}

/// Blanks one random rectangle whose removed share of stroke pixels falls in
/// `[lo, hi]`.
pub fn corrupt_sketch(s: &SketchImage, spec: &CorruptionSpec) -> Result<Corruption, DataError> {
    CorruptionSpec::new(spec.seed, spec.lo, spec.hi)?;
    let total = s.stroke_count();
    if total == 0 {
        return Err(DataError::EmptySketch);
    }
    let r = s.resolution;
    let (min_side, max_side) = ((r / 8).max(1), (r / 2).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for attempt in 1..=MAX_CORRUPTION_ATTEMPTS {
        let height = rng.random_range(min_side..=max_side);
        let width = rng.random_range(min_side..=max_side);
        let rect = Rect {
            row: rng.random_range(0..=r - height),
            col: rng.random_range(0..=r - width),
            height,
            width,
        };
        let mut removed = 0;
        for i in rect.row..rect.row + height {
            for j in rect.col..rect.col + width {
                removed += usize::from(s.is_stroke(i, j));
            }
        }
        let fraction = removed as f64 / total as f64;
        if fraction >= spec.lo && fraction <= spec.hi {
            let mut sketch = s.clone();
            for i in rect.row..rect.row + height {
                sketch.pixels[i * r + rect.col..i * r + rect.col + width].fill(BACKGROUND);
            }
            return Ok(Corruption {
                sketch,
                rect,
                removed_fraction: fraction,
                attempts: attempt,
            });
        }
    }
    Err(DataError::NoAcceptableRectangle {
        attempts: MAX_CORRUPTION_ATTEMPTS,
    })
}
