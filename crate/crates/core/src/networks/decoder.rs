use std::sync::{Arc, OnceLock};

use crate::autodiff::{Tape, Tensor, Var};
use crate::geometry::{icosphere, Subdivision};

use super::params::{Bound, Init, ParamStore};
use super::{NetConfig, NetworkError};

pub const STAGES: usize = 3;
/// Icosphere level deformed by the first stage; each later stage works one
/// level finer.
pub const FIRST_LEVEL: u32 = 1;
pub const OUTPUT_LEVEL: u32 = FIRST_LEVEL + STAGES as u32 - 1;
pub const OUTPUT_VERTICES: usize = 642;

/// Templates and refinement maps shared by every decoder instance.
pub struct DecoderTopology {
    pub templates: Vec<Tensor>,
    pub refinements: Vec<Subdivision>,
    pub faces: Arc<Vec<[u32; 3]>>,
}

pub fn topology() -> &'static DecoderTopology {
    static TOPO: OnceLock<DecoderTopology> = OnceLock::new();
    TOPO.get_or_init(|| {
        let meshes: Vec<_> = (FIRST_LEVEL..=OUTPUT_LEVEL)
            .map(|l| icosphere(l).expect("icosphere level in range"))
            .collect();
        DecoderTopology {
            templates: meshes.iter().map(|m| m.vertex_tensor()).collect(),
            refinements: meshes[..STAGES - 1].iter().map(Subdivision::of).collect(),
            faces: Arc::new(meshes[STAGES - 1].faces().to_vec()),
        }
    })
}

pub(super) fn init_decoder(
    cfg: &NetConfig,
    init: &Init,
    p: &mut ParamStore,
) -> Result<(), NetworkError> {
    let h = cfg.dec_hidden;
    for k in 1..=STAGES {
        let s = format!("dec.stage{k}");
        let w_in = format!("{s}.w_in");
        p.insert(w_in.clone(), init.he(&w_in, &[6, h], 6 + cfg.latent))?;
        let w_z = format!("{s}.w_z");
        p.insert(w_z.clone(), init.he(&w_z, &[cfg.latent, h], 6 + cfg.latent))?;
        p.insert(format!("{s}.b1"), Tensor::zeros([h]))?;
        let w_h = format!("{s}.w_h");
        p.insert(w_h.clone(), init.he(&w_h, &[h, h], h))?;
        p.insert(format!("{s}.b2"), Tensor::zeros([h]))?;
        // zero offsets at initialisation: the untrained decoder returns the template
        p.insert(format!("{s}.w_out"), Tensor::zeros([h, 3]))?;
        p.insert(format!("{s}.b_out"), Tensor::zeros([3]))?;
    }
    Ok(())
}

/// The decoder D: `[1, L]` code to `[642, 3]` vertices on the icosphere(3)
/// topology.
///
/// Each stage runs a per-vertex MLP over `[template direction, position]`
/// plus a projection of the code, adds `offset_scale * tanh(.)` offsets, and
/// refines the mesh for the next stage.
pub fn decode(tape: &mut Tape, p: &Bound, cfg: &NetConfig, z: Var) -> Result<Var, NetworkError> {
    let zv = tape.value(z)?;
    if zv.shape() != [1, cfg.latent] {
        return Err(NetworkError::Shape(format!("code shape {:?}", zv.shape())));
    }
    if !zv.is_finite() {
        return Err(NetworkError::NonFinite("code".into()));
    }
    let topo = topology();
    let mut pos = tape.constant(topo.templates[0].clone());
    for k in 0..STAGES {
        let s = format!("dec.stage{}", k + 1);
        let dirs = tape.constant(topo.templates[k].clone());
        let x = tape.concat(&[dirs, pos], 1)?;
        let h = tape.matmul(x, p.get(&format!("{s}.w_in"))?)?;
        let zh = tape.matmul(z, p.get(&format!("{s}.w_z"))?)?;
        let h = tape.add(h, zh)?;
        let h = tape.add(h, p.get(&format!("{s}.b1"))?)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, p.get(&format!("{s}.w_h"))?)?;
        let h = tape.add(h, p.get(&format!("{s}.b2"))?)?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, p.get(&format!("{s}.w_out"))?)?;
        let o = tape.add(o, p.get(&format!("{s}.b_out"))?)?;
        let o = tape.tanh(o)?;
        let o = tape.scale(o, cfg.offset_scale)?;
        pos = tape.add(pos, o)?;
        if let Some(refine) = topo.refinements.get(k) {
            pos = refine.refine(tape, pos)?;
        }
    }
    Ok(pos)
}
