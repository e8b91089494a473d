//! Training objectives: soft IoU, its multi-scale form, mesh regularizers and
//! the non-saturating adversarial pair.

use std::fmt;

use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::geometry::{GeometryError, RegularizerTopology};

pub const IOU_EPS: f32 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("silhouette shapes differ: {0:?} vs {1:?}")]
    ResolutionMismatch(Vec<usize>, Vec<usize>),
    #[error("multi-scale loss needs a square resolution divisible by 4, got {0:?}")]
    NotDivisible(Vec<usize>),
    #[error("empty logit list")]
    EmptyLogits,
    #[error("non-finite loss component `{0}`")]
    NonFinite(&'static str),
    #[error("negative loss weight `{0}`")]
    NegativeWeight(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weights for the quarter, half and full resolution terms.
    pub scales: [f32; 3],
    pub lambda_sd: f32,
    pub lambda_flat: f32,
    pub lambda_lap: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            scales: [1.0 / 3.0; 3],
            lambda_sd: 0.1,
            lambda_flat: 5e-4,
            lambda_lap: 5e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let named = [
            ("lambda_s", self.scales[0]),
            ("lambda_s", self.scales[1]),
            ("lambda_s", self.scales[2]),
            ("lambda_sd", self.lambda_sd),
            ("lambda_flat", self.lambda_flat),
            ("lambda_lap", self.lambda_lap),
        ];
        for (name, w) in named {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(LossError::NegativeWeight(name));
            }
        }
        Ok(())
    }
}

/// `1 - (sum(s1 s2) + eps) / (sum(s1 + s2 - s1 s2) + eps)`.
///
/// The epsilon on both sides makes an empty-vs-empty pair score 0 and keeps
/// the loss smooth there; elsewhere it moves the value by less than `eps`.
pub fn iou_loss(tape: &mut Tape, s1: Var, s2: Var) -> Result<Var, LossError> {
    let (a, b) = (
        tape.value(s1)?.shape().to_vec(),
        tape.value(s2)?.shape().to_vec(),
    );
    if a != b {
        return Err(LossError::ResolutionMismatch(a, b));
    }
    let prod = tape.mul(s1, s2)?;
    let inter = tape.sum_all(prod)?;
    let sum = tape.add(s1, s2)?;
    let uni = tape.sub(sum, prod)?;
    let uni = tape.sum_all(uni)?;
    let num = tape.shift(inter, IOU_EPS)?;
    let den = tape.shift(uni, IOU_EPS)?;
    let inv = tape.pow(den, -1.0)?;
    let ratio = tape.mul(num, inv)?;
    let neg = tape.scale(ratio, -1.0)?;
    Ok(tape.shift(neg, 1.0)?)
}

/// 2x2 average pooling of a `[R, R]` map.
pub fn avg_pool2(tape: &mut Tape, s: Var) -> Result<Var, LossError> {
    let shape = tape.value(s)?.shape().to_vec();
    let [r, c] = shape[..] else {
        return Err(LossError::NotDivisible(shape));
    };
    if r % 2 != 0 || c % 2 != 0 {
        return Err(LossError::NotDivisible(shape));
    }
    let x = tape.reshape(s, &[r / 2, 2, c / 2, 2])?;
    let x = tape.mean(x, 3)?;
    Ok(tape.mean(x, 1)?)
}

/// Weighted IoU losses at quarter, half and full resolution.
pub fn multiscale_silhouette_loss(
    tape: &mut Tape,
    pred: Var,
    gt: Var,
    weights: [f32; 3],
) -> Result<Var, LossError> {
    let (a, b) = (
        tape.value(pred)?.shape().to_vec(),
        tape.value(gt)?.shape().to_vec(),
    );
    if a != b {
        return Err(LossError::ResolutionMismatch(a, b));
    }
    if a.len() != 2 || a[0] != a[1] || a[0] % 4 != 0 {
        return Err(LossError::NotDivisible(a));
    }
    let half = (avg_pool2(tape, pred)?, avg_pool2(tape, gt)?);
    let quarter = (avg_pool2(tape, half.0)?, avg_pool2(tape, half.1)?);
    let mut total = None;
    for ((p, g), w) in [quarter, half, (pred, gt)].into_iter().zip(weights) {
        let l = iou_loss(tape, p, g)?;
        let l = tape.scale(l, w)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(total.expect("three scales"))
}

/// `lambda_flat * flatten + lambda_lap * laplacian` on `[V, 3]` vertices.
pub fn regularizer_loss(
    tape: &mut Tape,
    topo: &RegularizerTopology,
    vertices: Var,
    weights: &LossWeights,
) -> Result<Var, LossError> {
    let flat = topo.flatten(tape, vertices)?;
    let flat = tape.scale(flat, weights.lambda_flat)?;
    let lap = topo.laplacian(tape, vertices)?;
    let lap = tape.scale(lap, weights.lambda_lap)?;
    Ok(tape.add(flat, lap)?)
}

/// `log(1 + e^x)` from primitives, without overflow for large `|x|`.
pub fn softplus(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let pos = tape.relu(x)?;
    let negx = tape.scale(x, -1.0)?;
    let neg = tape.relu(negx)?;
    let abs = tape.add(pos, neg)?;
    let e = tape.scale(abs, -1.0)?;
    let e = tape.exp(e)?;
    let e = tape.shift(e, 1.0)?;
    let l = tape.log(e)?;
    tape.add(pos, l)
}

/// `f(u) = -softplus(-u) = -log(1 + e^-u)`.
pub fn f_log_sigmoid(tape: &mut Tape, u: Var) -> Result<Var, TensorError> {
    let neg = tape.scale(u, -1.0)?;
    let sp = softplus(tape, neg)?;
    tape.scale(sp, -1.0)
}

fn stack(tape: &mut Tape, logits: &[Var]) -> Result<Var, LossError> {
    if logits.is_empty() {
        return Err(LossError::EmptyLogits);
    }
    let flat = logits
        .iter()
        .map(|&l| {
            let n = tape.value(l)?.numel();
            tape.reshape(l, &[n])
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tape.concat(&flat, 0)?)
}

pub struct GanLosses {
    pub disc: Var,
    pub gen: Var,
}

/// `disc = -mean f(real) - mean f(-fake)` and `gen = -mean f(fake)`.
pub fn gan_losses(tape: &mut Tape, real: &[Var], fake: &[Var]) -> Result<GanLosses, LossError> {
    let real = stack(tape, real)?;
    let fake = stack(tape, fake)?;
    let fr = f_log_sigmoid(tape, real)?;
    let fr = tape.mean_all(fr)?;
    let neg_fake = tape.scale(fake, -1.0)?;
    let ff = f_log_sigmoid(tape, neg_fake)?;
    let ff = tape.mean_all(ff)?;
    let d = tape.add(fr, ff)?;
    let disc = tape.scale(d, -1.0)?;
    let g = f_log_sigmoid(tape, fake)?;
    let g = tape.mean_all(g)?;
    let gen = tape.scale(g, -1.0)?;
    Ok(GanLosses { disc, gen })
}

pub fn generator_loss(tape: &mut Tape, fake: &[Var]) -> Result<Var, LossError> {
    let fake = stack(tape, fake)?;
    let g = f_log_sigmoid(tape, fake)?;
    let g = tape.mean_all(g)?;
    Ok(tape.scale(g, -1.0)?)
}

pub fn discriminator_loss(tape: &mut Tape, real: &[Var], fake: &[Var]) -> Result<Var, LossError> {
    Ok(gan_losses(tape, real, fake)?.disc)
}

/// `l_sp + l_r + lambda_sd * l_sd_gen`.
pub fn total_loss(l_sp: f64, l_r: f64, l_sd_gen: f64, lambda_sd: f64) -> Result<f64, LossError> {
    for (name, v) in [("l_sp", l_sp), ("l_r", l_r), ("l_sd_gen", l_sd_gen)] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    Ok(l_sp + l_r + lambda_sd * l_sd_gen)
}

/// IoU loss on plain values, in `f64`.
pub fn iou_loss_value(s1: &Tensor, s2: &Tensor) -> Result<f64, LossError> {
    if s1.shape() != s2.shape() {
        return Err(LossError::ResolutionMismatch(
            s1.shape().to_vec(),
            s2.shape().to_vec(),
        ));
    }
    let (mut inter, mut uni) = (0.0f64, 0.0f64);
    for (&a, &b) in s1.data().iter().zip(s2.data()) {
        let (a, b) = (f64::from(a), f64::from(b));
        inter += a * b;
        uni += a + b - a * b;
    }
    let eps = f64::from(IOU_EPS);
    Ok(1.0 - (inter + eps) / (uni + eps))
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub l_sp: f64,
    pub l_r: f64,
    pub l_sd_gen: f64,
    pub l_sd_disc: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,total,l_sp,l_r,l_sd_gen,l_sd_disc,lr";

    pub fn csv_row(&self, step: u64, lr: f64) -> String {
        format!(
            "{step},{},{},{},{},{},{lr}",
            self.total, self.l_sp, self.l_r, self.l_sd_gen, self.l_sd_disc
        )
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total {:.5} sp {:.5} r {:.5} gen {:.5} disc {:.5}",
            self.total, self.l_sp, self.l_r, self.l_sd_gen, self.l_sd_disc
        )
    }
}
