use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{corrupt_sketch, CorruptionSpec, Sample, SketchImage};
use crate::geometry::{voxel_iou, voxelize_in, Aabb, Mesh};
use crate::networks::Model;
use crate::render::{canonical_pose, render_mask, sample_poses, CameraPose, Silhouette};

use super::trainer::Trainer;
use super::{TrainConfig, TrainError};

pub const EVAL_VOXEL_RESOLUTION: usize = 32;
pub const EVAL_HALF_EXTENT: f32 = 1.1;
/// Held-out views for multi-view IoU, besides the canonical one.
pub const EVAL_VIEWS: usize = 4;
const EVAL_VIEW_SEED: u64 = 0xe7a1;

/// Corruption levels of the robustness study: none, about 10% and about 20%
/// of stroke pixels removed.
pub const ROBUSTNESS_LEVELS: [(f64, f64); 3] = [(0.0, 0.0), (0.08, 0.12), (0.18, 0.22)];

/// IoU of two binary masks; two empty masks match perfectly.
pub fn mask_iou(a: &Silhouette, b: &Silhouette) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x >= 0.5, y >= 0.5);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn eval_poses() -> Vec<CameraPose> {
    let mut poses = vec![canonical_pose()];
    poses.extend(sample_poses(EVAL_VIEW_SEED, EVAL_VIEWS));
    poses
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResult {
    pub id: String,
    pub category: String,
    pub voxel_iou: f64,
    pub silhouette_iou: f64,
    pub multiview_iou: f64,
    pub removed_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryResult {
    pub category: String,
    pub count: usize,
    pub voxel_iou: f64,
    pub silhouette_iou: f64,
    pub multiview_iou: f64,
}

/// Per-sample, per-category and mean scores. Means are taken over
/// categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: Vec<SampleResult>,
    pub categories: Vec<CategoryResult>,
    pub mean_voxel_iou: f64,
    pub mean_silhouette_iou: f64,
    pub mean_multiview_iou: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleResult>) -> Self {
        let mut groups: BTreeMap<&str, Vec<&SampleResult>> = BTreeMap::new();
        for s in &samples {
            groups.entry(s.category.as_str()).or_default().push(s);
        }
        let categories: Vec<CategoryResult> = groups
            .into_iter()
            .map(|(c, rs)| CategoryResult {
                category: c.to_string(),
                count: rs.len(),
                voxel_iou: mean(rs.iter().map(|r| r.voxel_iou)),
                silhouette_iou: mean(rs.iter().map(|r| r.silhouette_iou)),
                multiview_iou: mean(rs.iter().map(|r| r.multiview_iou)),
            })
            .collect();
        Self {
            mean_voxel_iou: mean(categories.iter().map(|c| c.voxel_iou)),
            mean_silhouette_iou: mean(categories.iter().map(|c| c.silhouette_iou)),
            mean_multiview_iou: mean(categories.iter().map(|c| c.multiview_iou)),
            categories,
            samples,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>9} {:>9} {:>9}",
            "category", "n", "voxel", "sil", "multiview"
        );
        for c in &self.categories {
            let _ = writeln!(
                s,
                "{:<12} {:>5} {:>9.3} {:>9.3} {:>9.3}",
                c.category, c.count, c.voxel_iou, c.silhouette_iou, c.multiview_iou
            );
        }
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>9.3} {:>9.3} {:>9.3}",
            "mean",
            self.samples.len(),
            self.mean_voxel_iou,
            self.mean_silhouette_iou,
            self.mean_multiview_iou
        );
        s
    }
}

/// Scores one predicted mesh against its sample.
pub fn score_mesh(
    sample: &Sample,
    pred: &Mesh,
    removed_fraction: Option<f64>,
) -> Result<SampleResult, TrainError> {
    let bounds = Aabb::cube(EVAL_HALF_EXTENT);
    let a = voxelize_in(pred, EVAL_VOXEL_RESOLUTION, bounds)?;
    let b = voxelize_in(&sample.gt_mesh, EVAL_VOXEL_RESOLUTION, bounds)?;
    let r = sample.canonical_silhouette.resolution();
    let canonical = render_mask(pred, canonical_pose(), r)?;
    let silhouette_iou = mask_iou(&canonical, &sample.canonical_silhouette);
    let mut views = Vec::new();
    for pose in eval_poses() {
        let p = render_mask(pred, pose, r)?;
        let g = render_mask(&sample.gt_mesh, pose, r)?;
        views.push(mask_iou(&p, &g));
    }
    Ok(SampleResult {
        id: sample.id.clone(),
        category: sample.category.to_string(),
        voxel_iou: voxel_iou(&a, &b)?,
        silhouette_iou,
        multiview_iou: mean(views.into_iter()),
        removed_fraction,
    })
}

/// Evaluates an arbitrary sketch-to-mesh predictor.
pub fn evaluate_with<F>(samples: &[&Sample], predict: F) -> Result<EvalReport, TrainError>
where
    F: Fn(&Sample) -> Result<(Mesh, Option<f64>), TrainError> + Sync,
{
    let results = samples
        .par_iter()
        .map(|s| {
            let (mesh, removed) = predict(s)?;
            score_mesh(s, &mesh, removed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_samples(results))
}

fn infer(model: &Model, sketch: &SketchImage) -> Result<Mesh, TrainError> {
    if sketch.resolution() != model.cfg.resolution {
        return Err(TrainError::Config(format!(
            "sketch resolution {} differs from model resolution {}",
            sketch.resolution(),
            model.cfg.resolution
        )));
    }
    Ok(model.infer(&sketch.to_tensor())?)
}

/// Infers each sample's mesh from its sketch and scores it.
pub fn evaluate(model: &Model, samples: &[&Sample]) -> Result<EvalReport, TrainError> {
    evaluate_with(samples, |s| Ok((infer(model, &s.sketch)?, None)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub lo: f64,
    pub hi: f64,
    pub report: EvalReport,
}

/// Evaluates with each sketch corrupted at every level. A `(0, 0)` level
/// leaves the sketches untouched.
pub fn robustness_eval(
    model: &Model,
    samples: &[&Sample],
    levels: &[(f64, f64)],
) -> Result<Vec<LevelReport>, TrainError> {
    levels
        .iter()
        .enumerate()
        .map(|(li, &(lo, hi))| {
            let report = if lo == 0.0 && hi == 0.0 {
                evaluate(model, samples)?
            } else {
                evaluate_with(samples, |s| {
                    let seed = s.seed.rotate_left(8) ^ (li as u64 + 1);
                    let spec = CorruptionSpec::new(seed, lo, hi)?;
                    let c = corrupt_sketch(&s.sketch, &spec)?;
                    Ok((infer(model, &c.sketch)?, Some(c.removed_fraction)))
                })?
            };
            Ok(LevelReport { lo, hi, report })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Sd,
    SdSem,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Sd, Variant::SdSem];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Sd => "sd",
            Variant::SdSem => "sd+sem",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        c.net.sd_enabled = self != Variant::Baseline;
        c.net.sem_enabled = self == Variant::SdSem;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub multiview_iou: f64,
    pub voxel_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    /// Mean held-out multi-view IoU of a variant over seeds.
    pub fn mean(&self, v: Variant) -> f64 {
        mean(
            self.runs
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| r.multiview_iou),
        )
    }

    /// `mean(sd+sem) >= mean(sd) >= mean(baseline) - slack`.
    pub fn ordering_holds(&self, slack: f64) -> bool {
        let (b, s, ss) = (
            self.mean(Variant::Baseline),
            self.mean(Variant::Sd),
            self.mean(Variant::SdSem),
        );
        ss >= s - slack && s >= b - slack
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>10} {:>8}",
            "variant", "seed", "multiview", "voxel"
        );
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>10.4} {:>8.4}",
                r.variant.name(),
                r.seed,
                r.multiview_iou,
                r.voxel_iou
            );
        }
        for v in Variant::ALL {
            let _ = writeln!(s, "mean {:<10} {:.4}", v.name(), self.mean(v));
        }
        s
    }
}

/// Trains every variant for each seed on `train` and scores it on `test`.
pub fn ablate<F>(
    cfg: &TrainConfig,
    train: &[&Sample],
    test: &[&Sample],
    seeds: &[u64],
    mut progress: F,
) -> Result<AblationReport, TrainError>
where
    F: FnMut(&AblationRun),
{
    let mut runs = Vec::new();
    for &seed in seeds {
        for v in Variant::ALL {
            let mut c = v.apply(cfg);
            c.seed = seed;
            let mut t = Trainer::new(c)?;
            let steps = t.cfg.steps;
            t.fit(train, steps, |_, _, _| Ok(()))?;
            let report = evaluate(&t.model, test)?;
            let run = AblationRun {
                variant: v,
                seed,
                multiview_iou: report.mean_multiview_iou,
                voxel_iou: report.mean_voxel_iou,
            };
            progress(&run);
            runs.push(run);
        }
    }
    Ok(AblationReport { runs })
}
