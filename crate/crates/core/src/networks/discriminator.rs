use crate::autodiff::{Tape, Tensor, Var};

use super::params::{Bound, Init, ParamStore};
use super::{NetConfig, NetworkError};

fn final_extent(cfg: &NetConfig) -> usize {
    cfg.resolution >> cfg.sd_channels.len()
}

pub(super) fn init_discriminator(
    cfg: &NetConfig,
    init: &Init,
    p: &mut ParamStore,
) -> Result<(), NetworkError> {
    let mut in_c = 1;
    for (i, &c) in cfg.sd_channels.iter().enumerate() {
        let name = format!("sd.conv{}.w", i + 1);
        p.insert(name.clone(), init.he(&name, &[c, in_c, 3, 3], in_c * 9))?;
        p.insert(format!("sd.conv{}.b", i + 1), Tensor::zeros([c]))?;
        in_c = c;
    }
    let e = final_extent(cfg);
    let features = in_c * e * e;
    p.insert(
        "sd.fc.w",
        init.glorot("sd.fc.w", &[features, 1], features, 1),
    )?;
    p.insert("sd.fc.b", Tensor::zeros([1]))?;
    Ok(())
}

/// The shape discriminator SD: `[R, R]` silhouette to a `[1, 1]` logit.
pub fn discriminate(
    tape: &mut Tape,
    p: &Bound,
    cfg: &NetConfig,
    silhouette: Var,
) -> Result<Var, NetworkError> {
    let r = cfg.resolution;
    let shape = tape.value(silhouette)?.shape().to_vec();
    if shape != [r, r] {
        return Err(NetworkError::Resolution { expected: r, shape });
    }
    let mut h = tape.reshape(silhouette, &[1, r, r])?;
    for i in 0..cfg.sd_channels.len() {
        let w = p.get(&format!("sd.conv{}.w", i + 1))?;
        let b = p.get(&format!("sd.conv{}.b", i + 1))?;
        h = tape.conv2d(h, w, Some(b), 2, 1)?;
        h = tape.relu(h)?;
    }
    let n = tape.value(h)?.numel();
    let flat = tape.reshape(h, &[1, n])?;
    let logit = tape.matmul(flat, p.get("sd.fc.w")?)?;
    Ok(tape.add(logit, p.get("sd.fc.b")?)?)
}
