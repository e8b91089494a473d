use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::archive::TensorMap;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Sample;
use crate::geometry::{icosphere, RegularizerTopology};
use crate::losses::{
    discriminator_loss, generator_loss, multiscale_silhouette_loss, regularizer_loss, total_loss,
    LossReport,
};
use crate::networks::{
    decode, discriminate, encode, topology, Bound, Model, ParamStore, OUTPUT_LEVEL,
};
use crate::render::{canonical_pose, render_mask, sample_pose, soft_silhouette_var, CameraPose};

use super::optim::{lr_at, Adam};
use super::{TrainConfig, TrainError};

pub const GENERATOR_PREFIXES: [&str; 3] = ["enc.", "sem.", "dec."];
pub const DISCRIMINATOR_PREFIX: &str = "sd.";
const POSE_STREAM: u64 = 0x9f1c_3a77_0000_0000;
const ORDER_STREAM: u64 = 0x41d2_8be5_0000_0000;

fn regularizer_topology() -> &'static RegularizerTopology {
    static TOPO: OnceLock<RegularizerTopology> = OnceLock::new();
    TOPO.get_or_init(|| {
        let mesh = icosphere(OUTPUT_LEVEL).expect("decoder level");
        RegularizerTopology::new(&mesh).expect("icosphere is a closed manifold")
    })
}

/// Parameters whose names start with any of `prefixes`.
pub fn param_subset(params: &ParamStore, prefixes: &[&str]) -> ParamStore {
    ParamStore::from_map(
        params
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    )
}

/// Sample indices used at `step`. Each epoch is a fresh permutation drawn
/// from the seed; trailing samples that do not fill a batch are skipped.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let per_epoch = (n / batch) as u64;
    let (epoch, k) = (step / per_epoch, (step % per_epoch) as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ORDER_STREAM ^ epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order[k * batch..(k + 1) * batch].to_vec()
}

/// Poses for each batch slot at `step`.
pub fn step_poses(seed: u64, step: u64, batch: usize, n_views: usize) -> Vec<Vec<CameraPose>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POSE_STREAM ^ step);
    (0..batch)
        .map(|_| (0..n_views).map(|_| sample_pose(&mut rng)).collect())
        .collect()
}

/// Generator half of a step for one sample, kept alive until the
/// discriminator has been updated.
struct Forward {
    tape: Tape,
    bound: Bound,
    fakes: Vec<Var>,
    fake_values: Vec<Tensor>,
    real_values: Vec<Tensor>,
    l_sp: Var,
    l_r: Var,
}

fn forward(
    gen: &ParamStore,
    cfg: &TrainConfig,
    sample: &Sample,
    poses: &[CameraPose],
) -> Result<Forward, TrainError> {
    let r = cfg.net.resolution;
    if sample.canonical_silhouette.resolution() != r {
        return Err(TrainError::Config(format!(
            "sample `{}` has resolution {}, model expects {r}",
            sample.id,
            sample.canonical_silhouette.resolution()
        )));
    }
    let mut tape = Tape::new();
    let bound = gen.bind(&mut tape, true);
    let z = encode(&mut tape, &bound, &cfg.net, &sample.sketch.to_tensor())?;
    let verts = decode(&mut tape, &bound, &cfg.net, z)?;
    let faces = &topology().faces;
    let rc = cfg.render_config();
    let scales = cfg.weights.scales;

    let pred = soft_silhouette_var(&mut tape, verts, faces, canonical_pose(), &rc)?;
    let gt = tape.constant(sample.canonical_silhouette.to_tensor());
    let mut l_sp = multiscale_silhouette_loss(&mut tape, pred, gt, scales)?;
    let mut fakes = Vec::with_capacity(poses.len());
    let mut fake_values = Vec::with_capacity(poses.len());
    let mut real_values = Vec::with_capacity(poses.len());
    for &pose in poses {
        let pred = soft_silhouette_var(&mut tape, verts, faces, pose, &rc)?;
        let mask = render_mask(&sample.gt_mesh, pose, r)?.to_tensor();
        let gt = tape.constant(mask.clone());
        let l = multiscale_silhouette_loss(&mut tape, pred, gt, scales)?;
        l_sp = tape.add(l_sp, l)?;
        fakes.push(pred);
        fake_values.push(tape.value(pred)?.clone());
        real_values.push(mask);
    }
    let l_sp = tape.scale(l_sp, 1.0 / (1 + poses.len()) as f32)?;
    let l_r = regularizer_loss(&mut tape, regularizer_topology(), verts, &cfg.weights)?;
    Ok(Forward {
        tape,
        bound,
        fakes,
        fake_values,
        real_values,
        l_sp,
        l_r,
    })
}

struct Backward {
    grads: TensorMap,
    total: f64,
    l_sp: f64,
    l_r: f64,
    gen: f64,
}

fn scalar(tape: &Tape, v: Var) -> Result<f64, TrainError> {
    Ok(f64::from(tape.value(v)?.item()?))
}

fn backward(
    mut f: Forward,
    sd: Option<&ParamStore>,
    cfg: &TrainConfig,
) -> Result<Backward, TrainError> {
    let tape = &mut f.tape;
    let mut total = tape.add(f.l_sp, f.l_r)?;
    let mut gen = 0.0;
    if let (Some(sd), false) = (sd, f.fakes.is_empty()) {
        let sd_bound = sd.bind(tape, false);
        let logits = f
            .fakes
            .iter()
            .map(|&s| discriminate(tape, &sd_bound, &cfg.net, s))
            .collect::<Result<Vec<_>, _>>()?;
        let g = generator_loss(tape, &logits)?;
        gen = scalar(tape, g)?;
        let weighted = tape.scale(g, cfg.weights.lambda_sd)?;
        total = tape.add(total, weighted)?;
    }
    let (l_sp, l_r) = (scalar(tape, f.l_sp)?, scalar(tape, f.l_r)?);
    total_loss(l_sp, l_r, gen, f64::from(cfg.weights.lambda_sd))
        .map_err(|e| TrainError::NonFinite(e.to_string()))?;
    let grads = tape.backward(total)?;
    Ok(Backward {
        grads: f.bound.collect_grads(tape, &grads)?,
        total: scalar(tape, total)?,
        l_sp,
        l_r,
        gen,
    })
}

/// Model, optimiser state and step counter of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let model = Model::init(cfg.net.clone(), cfg.seed)?;
        Ok(Self {
            cfg,
            model,
            adam: Adam::new(),
            step: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.step, &self.cfg)
    }

    /// One optimisation step on `batch`: a discriminator update when the
    /// adversary is enabled, then a generator update.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<LossReport, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let cfg = &self.cfg;
        let lr = lr_at(self.step, cfg);
        let t = self.step + 1;
        let adversarial = cfg.adversarial();
        let n_views = cfg.n_views;
        let poses = step_poses(cfg.seed, self.step, batch.len(), n_views);
        let gen_params = param_subset(&self.model.params, &GENERATOR_PREFIXES);
        let forwards = batch
            .par_iter()
            .zip(poses.par_iter())
            .map(|(s, p)| forward(&gen_params, cfg, s, p))
            .collect::<Result<Vec<_>, _>>()?;

        let mut l_sd_disc = 0.0;
        let sd_params = if adversarial && n_views > 0 {
            let sd = self.model.params.with_prefix(DISCRIMINATOR_PREFIX);
            let mut tape = Tape::new();
            let bound = sd.bind(&mut tape, true);
            let (mut real, mut fake) = (Vec::new(), Vec::new());
            for f in &forwards {
                for (r, v) in f.real_values.iter().zip(&f.fake_values) {
                    let rv = tape.constant(r.clone());
                    real.push(discriminate(&mut tape, &bound, &cfg.net, rv)?);
                    let fv = tape.constant(v.clone());
                    fake.push(discriminate(&mut tape, &bound, &cfg.net, fv)?);
                }
            }
            let disc = discriminator_loss(&mut tape, &real, &fake)?;
            l_sd_disc = scalar(&tape, disc)?;
            if !l_sd_disc.is_finite() {
                return Err(TrainError::NonFinite("l_sd_disc".into()));
            }
            let grads = tape.backward(disc)?;
            let grads = bound.collect_grads(&tape, &grads)?;
            self.adam
                .update(&mut self.model.params, &grads, lr, t, &self.cfg)?;
            Some(self.model.params.with_prefix(DISCRIMINATOR_PREFIX))
        } else {
            None
        };

        let cfg = &self.cfg;
        let results = forwards
            .into_par_iter()
            .map(|f| backward(f, sd_params.as_ref(), cfg))
            .collect::<Result<Vec<_>, _>>()?;

        let n = results.len() as f64;
        let mut grads = TensorMap::new();
        let mut report = LossReport {
            l_sd_disc,
            ..LossReport::default()
        };
        for r in &results {
            report.total += r.total / n;
            report.l_sp += r.l_sp / n;
            report.l_r += r.l_r / n;
            report.l_sd_gen += r.gen / n;
            for (name, g) in &r.grads {
                match grads.get_mut(name) {
                    None => {
                        grads.insert(name.clone(), g.clone());
                    }
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
            }
        }
        let inv = (1.0 / n) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        self.adam
            .update(&mut self.model.params, &grads, lr, t, &self.cfg)?;
        self.step += 1;
        Ok(report)
    }

    /// Runs until `self.step == steps`, calling `on_step` after every step
    /// with the step index, its report and the learning rate used.
    pub fn fit<F>(
        &mut self,
        samples: &[&Sample],
        steps: u64,
        mut on_step: F,
    ) -> Result<(), TrainError>
    where
        F: FnMut(u64, &LossReport, f64) -> Result<(), TrainError>,
    {
        if samples.is_empty() {
            return Err(TrainError::Config("no training samples".into()));
        }
        while self.step < steps {
            let idx = batch_indices(self.cfg.seed, self.step, samples.len(), self.cfg.batch);
            let batch: Vec<&Sample> = idx.iter().map(|&i| samples[i]).collect();
            let (step, lr) = (self.step, self.lr());
            let report = self.train_step(&batch)?;
            on_step(step, &report, lr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Category, Dataset, DatasetConfig, Split};
    use crate::networks::NetConfig;

    pub(crate) fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            net: NetConfig {
                resolution: 16,
                latent: 8,
                enc_channels: vec![4, 4, 8, 8, 8],
                enc_strides: vec![2, 2, 1, 1, 1],
                dec_hidden: 8,
                sd_channels: vec![4, 4],
                ..NetConfig::default()
            },
            batch: 2,
            lr0: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Dataset {
        Dataset::generate(&DatasetConfig {
            n_train: 3,
            n_test: 1,
            categories: vec![Category::Ellipsoid, Category::Box],
            resolution: 16,
            seed: 1,
        })
        .unwrap()
    }

    fn checksum(p: &ParamStore, prefix: &str) -> f64 {
        p.iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .flat_map(|(_, t)| t.data().iter().map(|&v| f64::from(v)))
            .sum()
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut seen: Vec<usize> = (0..4).flat_map(|s| batch_indices(7, s, 9, 2)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        assert_eq!(batch_indices(7, 3, 9, 2), batch_indices(7, 3, 9, 2));
        assert_eq!(batch_indices(7, 0, 3, 8), vec![0, 1, 2]);
    }

    #[test]
    fn report_identity_and_determinism() {
        let data = tiny_data();
        let train = data.split(Split::Train);
        let run = || {
            let mut t = Trainer::new(tiny_cfg()).unwrap();
            let mut reports = Vec::new();
            t.fit(&train, 3, |_, r, _| {
                reports.push(*r);
                Ok(())
            })
            .unwrap();
            (t, reports)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a.model.params, b.model.params);
        for r in &ra {
            let want = r.l_sp + r.l_r + 0.1 * r.l_sd_gen;
            assert!((r.total - want).abs() < 1e-6, "{r:?}");
            assert!(r.l_sd_disc > 0.0);
        }
    }

    #[test]
    fn zero_lambda_leaves_the_discriminator_untouched() {
        let data = tiny_data();
        let train = data.split(Split::Train);
        let mut cfg = tiny_cfg();
        cfg.weights.lambda_sd = 0.0;
        let mut t = Trainer::new(cfg).unwrap();
        let (sd0, dec0) = (
            checksum(&t.model.params, "sd."),
            checksum(&t.model.params, "dec."),
        );
        t.fit(&train, 2, |_, r, _| {
            assert_eq!(r.l_sd_gen, 0.0);
            Ok(())
        })
        .unwrap();
        assert_eq!(checksum(&t.model.params, "sd."), sd0);
        assert_ne!(checksum(&t.model.params, "dec."), dec0);
    }

    #[test]
    fn both_parameter_groups_are_updated_once_per_step() {
        let data = tiny_data();
        let train = data.split(Split::Train);
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        t.fit(&train, 1, |_, _, _| Ok(())).unwrap();
        let gen_names: Vec<_> = param_subset(&t.model.params, &GENERATOR_PREFIXES)
            .names()
            .map(str::to_string)
            .collect();
        let sd_names: Vec<_> = t
            .model
            .params
            .with_prefix(DISCRIMINATOR_PREFIX)
            .names()
            .map(str::to_string)
            .collect();
        assert_eq!(t.adam.m.len(), gen_names.len() + sd_names.len());
        for n in gen_names.iter().chain(&sd_names) {
            assert!(t.adam.m.contains_key(n), "{n}");
        }
    }

    #[test]
    fn topology_is_unchanged_by_training() {
        let data = tiny_data();
        let train = data.split(Split::Train);
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        t.fit(&train, 2, |_, _, _| Ok(())).unwrap();
        let mesh = t.model.infer(&train[0].sketch.to_tensor()).unwrap();
        assert_eq!(mesh.faces(), topology().faces.as_slice());
    }

    #[test]
    fn resolution_mismatch_is_reported() {
        let data = tiny_data();
        let train = data.split(Split::Train);
        let mut cfg = tiny_cfg();
        cfg.net.resolution = 32;
        let mut t = Trainer::new(cfg).unwrap();
        assert!(matches!(t.train_step(&train), Err(TrainError::Config(_))));
    }
}
