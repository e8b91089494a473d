use crate::autodiff::{Tape, Tensor, Var};

use super::params::{Bound, Init, ParamStore};
use super::{AttentionNorm, NetConfig, NetworkError};

pub(super) fn init_encoder(
    cfg: &NetConfig,
    init: &Init,
    p: &mut ParamStore,
) -> Result<(), NetworkError> {
    let mut in_c = 1;
    for (i, &c) in cfg.enc_channels.iter().enumerate() {
        let name = format!("enc.conv{}", i + 1);
        p.insert(
            format!("{name}.w"),
            init.he(&format!("{name}.w"), &[c, in_c, 3, 3], in_c * 9),
        )?;
        p.insert(format!("{name}.b"), Tensor::zeros([c]))?;
        in_c = c;
    }
    let fc = "enc.fc.w";
    p.insert(fc, init.glorot(fc, &[in_c, cfg.latent], in_c, cfg.latent))?;
    p.insert("enc.fc.b", Tensor::zeros([cfg.latent]))?;
    if cfg.sem_enabled {
        init_sem(in_c, init, p)?;
    }
    Ok(())
}

fn init_sem(c: usize, init: &Init, p: &mut ParamStore) -> Result<(), NetworkError> {
    let reduced = (c / 8).max(1);
    for (name, out) in [("sem.b", reduced), ("sem.c", reduced), ("sem.d", c)] {
        let w = format!("{name}.w");
        p.insert(w.clone(), init.glorot(&w, &[out, c], c, out))?;
        p.insert(format!("{name}.b"), Tensor::zeros([out, 1]))?;
    }
    for name in ["sem.post1", "sem.post2"] {
        let w = format!("{name}.w");
        p.insert(w.clone(), init.he(&w, &[c, c, 3, 3], c * 9))?;
        p.insert(format!("{name}.b"), Tensor::zeros([c]))?;
    }
    Ok(())
}

/// Converts a `[R, R]` sketch with 0 = stroke into the `[1, R, R]` network
/// input with 1 = stroke.
pub fn sketch_input(sketch: &Tensor, resolution: usize) -> Result<Tensor, NetworkError> {
    if sketch.shape() != [resolution, resolution] {
        return Err(NetworkError::Resolution {
            expected: resolution,
            shape: sketch.shape().to_vec(),
        });
    }
    let data = sketch.data().iter().map(|&v| 1.0 - v).collect();
    Ok(Tensor::new([1, resolution, resolution], data)?)
}

/// The encoder E: sketch to `[1, L]` shape code.
pub fn encode(
    tape: &mut Tape,
    p: &Bound,
    cfg: &NetConfig,
    sketch: &Tensor,
) -> Result<Var, NetworkError> {
    let x = sketch_input(sketch, cfg.resolution)?;
    let mut h = tape.constant(x);
    for (i, &stride) in cfg.enc_strides.iter().enumerate() {
        let name = format!("enc.conv{}", i + 1);
        h = tape.conv2d(
            h,
            p.get(&format!("{name}.w"))?,
            Some(p.get(&format!("{name}.b"))?),
            stride,
            1,
        )?;
        h = tape.relu(h)?;
    }
    if cfg.sem_enabled {
        h = sem_attention(tape, p, h, cfg.lambda_attn, cfg.attention_norm)?.output;
    }
    let shape = tape.value(h)?.shape().to_vec();
    let (c, w) = (shape[0], shape[1] * shape[2]);
    let flat = tape.reshape(h, &[c, w])?;
    let pooled = tape.mean(flat, 1)?;
    let pooled = tape.reshape(pooled, &[1, c])?;
    let z = tape.matmul(pooled, p.get("enc.fc.w")?)?;
    Ok(tape.add(z, p.get("enc.fc.b")?)?)
}

pub struct SemOutput {
    pub output: Var,
    /// `[W, W]` attention map; entry `(i, j)` weighs source position `i`
    /// for output position `j`.
    pub attention: Var,
}

/// Position attention over a `[C, N, M]` feature map.
///
/// With `B`, `C'` and `D` from 1x1 convolutions over the `W = N M` positions,
/// `s = softmax(B^T C')` normalised over the source index (or over the output
/// index with [`AttentionNorm::Target`]), `F = lambda D s + A`, and the
/// result is `F + post(lambda D s)` where `post` is conv3x3, relu, conv3x3.
pub fn sem_attention(
    tape: &mut Tape,
    p: &Bound,
    a: Var,
    lambda: f32,
    norm: AttentionNorm,
) -> Result<SemOutput, NetworkError> {
    let shape = tape.value(a)?.shape().to_vec();
    let [c, n, m] = shape[..] else {
        return Err(NetworkError::Shape(format!("feature map {shape:?}")));
    };
    let expected = tape.value(p.get("sem.d.w")?)?.shape()[1];
    if expected != c {
        return Err(NetworkError::Shape(format!(
            "SEM expects {expected} channels, got {c}"
        )));
    }
    let w = n * m;
    let a2 = tape.reshape(a, &[c, w])?;
    let mut proj = |name: &str| -> Result<Var, NetworkError> {
        let y = tape.matmul(p.get(&format!("{name}.w"))?, a2)?;
        Ok(tape.add(y, p.get(&format!("{name}.b"))?)?)
    };
    let b = proj("sem.b")?;
    let cq = proj("sem.c")?;
    let d = proj("sem.d")?;
    let bt = tape.transpose(b)?;
    let energy = tape.matmul(bt, cq)?;
    let axis = match norm {
        AttentionNorm::Source => 0,
        AttentionNorm::Target => 1,
    };
    let s = tape.softmax(energy, axis)?;
    let ds = tape.matmul(d, s)?;
    let attended = tape.scale(ds, lambda)?;
    let f = tape.add(attended, a2)?;
    let map = tape.reshape(attended, &[c, n, m])?;
    let h = tape.conv2d(
        map,
        p.get("sem.post1.w")?,
        Some(p.get("sem.post1.b")?),
        1,
        1,
    )?;
    let h = tape.relu(h)?;
    let h = tape.conv2d(h, p.get("sem.post2.w")?, Some(p.get("sem.post2.b")?), 1, 1)?;
    let h = tape.reshape(h, &[c, w])?;
    let out = tape.add(f, h)?;
    Ok(SemOutput {
        output: tape.reshape(out, &[c, n, m])?,
        attention: s,
    })
}
