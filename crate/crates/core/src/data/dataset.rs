use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{io as mesh_io, Mesh};
use crate::image::GrayImage;
use crate::render::{canonical_pose, render_mask, Silhouette};

use super::primitives::{generate_primitive, Category};
use super::sketch::{synthesize_sketch, SketchImage};
use super::DataError;

pub const DEFAULT_RESOLUTION: usize = 64;
pub const MAX_RESOLUTION: usize = 256;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
const SKETCH_STREAM: u64 = 0x5be7_c4a1_9e37_79b9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(DataError::InvalidConfig(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub categories: Vec<Category>,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 32,
            n_test: 8,
            categories: Category::ALL.to_vec(),
            resolution: DEFAULT_RESOLUTION,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(DataError::InvalidConfig(
                "sample counts must be at least 1".into(),
            ));
        }
        if self.categories.is_empty() {
            return Err(DataError::InvalidConfig("no categories".into()));
        }
        if !(8..=MAX_RESOLUTION).contains(&self.resolution) || !self.resolution.is_multiple_of(4) {
            return Err(DataError::InvalidConfig(format!(
                "resolution {} must be a multiple of 4 in 8..={MAX_RESOLUTION}",
                self.resolution
            )));
        }
        Ok(())
    }
}

/// One training or test example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub category: Category,
    pub seed: u64,
    pub sketch: SketchImage,
    pub gt_mesh: Mesh,
    /// Binary mask of `gt_mesh` at the canonical pose.
    pub canonical_silhouette: Silhouette,
}

impl Sample {
    /// Builds the sample for `seed` deterministically.
    pub fn generate(
        id: String,
        split: Split,
        category: Category,
        seed: u64,
        resolution: usize,
    ) -> Result<Self, DataError> {
        let gt_mesh = generate_primitive(category, seed)?;
        let pose = canonical_pose();
        let canonical_silhouette = render_mask(&gt_mesh, pose, resolution)?;
        let sketch = synthesize_sketch(&gt_mesh, pose, seed ^ SKETCH_STREAM, resolution)?;
        Ok(Self {
            id,
            split,
            category,
            seed,
            sketch,
            gt_mesh,
            canonical_silhouette,
        })
    }
}

/// Seed for sample `index` of `split`, independent of every other sample.
pub fn sample_seed(master: u64, split: Split, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((split.stream() << 32) | index as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub resolution: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn generate(cfg: &DatasetConfig) -> Result<Self, DataError> {
        cfg.validate()?;
        let jobs: Vec<_> = [(Split::Train, cfg.n_train), (Split::Test, cfg.n_test)]
            .into_iter()
            .flat_map(|(split, n)| (0..n).map(move |i| (split, i)))
            .collect();
        let samples = jobs
            .par_iter()
            .map(|&(split, i)| {
                let category = cfg.categories[i % cfg.categories.len()];
                Sample::generate(
                    format!("{split}-{i:04}"),
                    split,
                    category,
                    sample_seed(cfg.seed, split, i),
                    cfg.resolution,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            resolution: cfg.resolution,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes every sample and the manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<ManifestRecord>, DataError> {
        let sample_dir = dir.join("samples");
        fs::create_dir_all(&sample_dir).map_err(|e| io_err(&sample_dir, e))?;
        let mut records = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let rec = ManifestRecord {
                id: s.id.clone(),
                split: s.split,
                category: s.category.to_string(),
                seed: s.seed,
                resolution: self.resolution,
                sketch: format!("samples/{}.sketch.png", s.id),
                mesh: format!("samples/{}.obj", s.id),
                silhouette: format!("samples/{}.silhouette.png", s.id),
            };
            write_file(&dir.join(&rec.sketch), &s.sketch.to_png()?)?;
            write_file(&dir.join(&rec.mesh), mesh_io::to_obj(&s.gt_mesh).as_bytes())?;
            write_file(
                &dir.join(&rec.silhouette),
                &s.canonical_silhouette.to_png()?,
            )?;
            records.push(rec);
        }
        let mut manifest = String::new();
        for rec in &records {
            manifest.push_str(&serde_json::to_string(rec).expect("manifest record serializes"));
            manifest.push('\n');
        }
        write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
        Ok(records)
    }

    /// Reads a dataset written by [`Dataset::write`].
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let mut samples = Vec::new();
        let mut resolution = None;
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| DataError::Manifest(format!("line {}: {e}", n + 1)))?;
            if *resolution.get_or_insert(rec.resolution) != rec.resolution {
                return Err(DataError::Manifest(format!(
                    "line {}: mixed resolutions",
                    n + 1
                )));
            }
            samples.push(rec.load(dir)?);
        }
        let resolution =
            resolution.ok_or_else(|| DataError::Manifest("manifest is empty".into()))?;
        Ok(Self {
            resolution,
            samples,
        })
    }
}

/// One manifest line; paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub category: String,
    pub seed: u64,
    pub resolution: usize,
    pub sketch: String,
    pub mesh: String,
    pub silhouette: String,
}

impl ManifestRecord {
    fn load(&self, dir: &Path) -> Result<Sample, DataError> {
        let read = |rel: &str| {
            let p = dir.join(rel);
            fs::read(&p).map_err(|e| io_err(&p, e))
        };
        let sketch_img = GrayImage::decode_png(&read(&self.sketch)?)?;
        if sketch_img.width != self.resolution || sketch_img.height != self.resolution {
            return Err(DataError::Manifest(format!(
                "{}: sketch is {}x{}",
                self.id, sketch_img.width, sketch_img.height
            )));
        }
        let sketch = SketchImage::from_binary_image(&sketch_img, self.resolution)?;
        let obj = String::from_utf8(read(&self.mesh)?)
            .map_err(|_| DataError::Manifest(format!("{}: mesh is not UTF-8", self.id)))?;
        let gt_mesh = mesh_io::parse_obj(&obj)?;
        let sil_img = GrayImage::decode_png(&read(&self.silhouette)?)?;
        let canonical_silhouette = Silhouette::from_image(&sil_img)?;
        if canonical_silhouette.resolution() != self.resolution {
            return Err(DataError::Manifest(format!(
                "{}: silhouette resolution {}",
                self.id,
                canonical_silhouette.resolution()
            )));
        }
        Ok(Sample {
            id: self.id.clone(),
            split: self.split,
            category: self.category.parse()?,
            seed: self.seed,
            sketch,
            gt_mesh,
            canonical_silhouette,
        })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))
}

/// Generates and writes a dataset in one go.
pub fn build_dataset(cfg: &DatasetConfig, out: &Path) -> Result<Vec<ManifestRecord>, DataError> {
    Dataset::generate(cfg)?.write(out)
}
