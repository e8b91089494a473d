//! Checkpoint archive: parameters, Adam moments (`adam.m.*`, `adam.v.*`),
//! the step counter and the config text, all as named tensors.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::archive::{self, TensorMap};
use crate::autodiff::Tensor;
use crate::networks::{Model, ParamStore};

use super::optim::Adam;
use super::trainer::Trainer;
use super::{TrainConfig, TrainError};

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";
const STEP_KEY: &str = "meta.step";
const CONFIG_KEY: &str = "meta.config";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cfg: TrainConfig,
    pub params: ParamStore,
    pub adam: Adam,
    pub step: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            cfg: t.cfg.clone(),
            params: t.model.params.clone(),
            adam: t.adam.clone(),
            step: t.step,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer, TrainError> {
        let model = Model::from_parts(self.cfg.net.clone(), self.params)?;
        Ok(Trainer {
            cfg: self.cfg,
            model,
            adam: self.adam,
            step: self.step,
        })
    }

    pub fn model(&self) -> Result<Model, TrainError> {
        Ok(Model::from_parts(
            self.cfg.net.clone(),
            self.params.clone(),
        )?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut map = self.params.as_map().clone();
        for (k, t) in &self.adam.m {
            map.insert(format!("{M_PREFIX}{k}"), t.clone());
        }
        for (k, t) in &self.adam.v {
            map.insert(format!("{V_PREFIX}{k}"), t.clone());
        }
        // 16-bit limbs keep the counter exact in f32
        let limbs = (0..4)
            .map(|i| ((self.step >> (16 * i)) & 0xffff) as f32)
            .collect();
        map.insert(
            STEP_KEY.into(),
            Tensor::new([4], limbs).expect("four limbs"),
        );
        let text = self.cfg.to_text();
        let bytes: Vec<f32> = text.bytes().map(f32::from).collect();
        map.insert(
            CONFIG_KEY.into(),
            Tensor::new([bytes.len()], bytes).expect("config bytes"),
        );
        archive::encode(&map)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let map = archive::decode(bytes)?;
        let bad = |m: &str| TrainError::Checkpoint(m.to_string());
        let cfg_t = map.get(CONFIG_KEY).ok_or_else(|| bad("missing config"))?;
        let text: Vec<u8> = cfg_t
            .data()
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(bad("config bytes out of range"))
                }
            })
            .collect::<Result<_, _>>()?;
        let text = String::from_utf8(text).map_err(|_| bad("config is not UTF-8"))?;
        let cfg = TrainConfig::parse_text(&text)?;
        let step_t = map.get(STEP_KEY).ok_or_else(|| bad("missing step"))?;
        if step_t.shape() != [4] {
            return Err(bad("step counter shape"));
        }
        let mut step = 0u64;
        for (i, &limb) in step_t.data().iter().enumerate() {
            if !(0.0..65536.0).contains(&limb) || limb.fract() != 0.0 {
                return Err(bad("step counter limb out of range"));
            }
            step |= (limb as u64) << (16 * i);
        }
        let (mut params, mut m, mut v) = (TensorMap::new(), TensorMap::new(), TensorMap::new());
        for (k, t) in map {
            if let Some(name) = k.strip_prefix(M_PREFIX) {
                m.insert(name.to_string(), t);
            } else if let Some(name) = k.strip_prefix(V_PREFIX) {
                v.insert(name.to_string(), t);
            } else if !k.starts_with("meta.") {
                params.insert(k, t);
            }
        }
        if let Some(k) = m.keys().chain(v.keys()).find(|k| !params.contains_key(*k)) {
            return Err(TrainError::Checkpoint(format!(
                "moment for unknown parameter `{k}`"
            )));
        }
        let params = ParamStore::from_map(params);
        Model::from_parts(cfg.net.clone(), params.clone())?;
        Ok(Self {
            cfg,
            params,
            adam: Adam { m, v },
            step,
        })
    }

    /// Writes the archive and returns its SHA-256.
    pub fn save(&self, path: &Path) -> Result<String, TrainError> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes =
            fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::NetConfig;

    fn small() -> Checkpoint {
        let cfg = TrainConfig {
            net: NetConfig {
                resolution: 16,
                latent: 8,
                enc_channels: vec![4, 4, 8, 8, 8],
                enc_strides: vec![2, 2, 1, 1, 1],
                dec_hidden: 8,
                sd_channels: vec![4, 4],
                ..NetConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(cfg).unwrap();
        t.step = 70_000_123;
        let g = t.model.params.get("dec.stage1.b1").unwrap().clone();
        t.adam.m.insert("dec.stage1.b1".into(), g.map(|v| v + 0.25));
        t.adam
            .v
            .insert("dec.stage1.b1".into(), g.map(|v| v * v + 1e-9));
        Checkpoint::from_trainer(&t)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = small();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step, 70_000_123);
    }

    #[test]
    fn save_reports_the_file_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.d3sk");
        let c = small();
        let h = c.save(&path).unwrap();
        assert_eq!(h, sha256_hex(&fs::read(&path).unwrap()));
        assert_eq!(h.len(), 64);
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn tampered_archives_are_rejected() {
        let c = small();
        let mut map = archive::decode(&c.to_bytes()).unwrap();
        map.remove("enc.fc.w");
        assert!(Checkpoint::from_bytes(&archive::encode(&map)).is_err());
        let mut map = archive::decode(&c.to_bytes()).unwrap();
        map.insert("adam.m.ghost".into(), Tensor::scalar(0.0));
        assert!(matches!(
            Checkpoint::from_bytes(&archive::encode(&map)),
            Err(TrainError::Checkpoint(_))
        ));
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
