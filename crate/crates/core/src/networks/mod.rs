//! Generator (encoder with optional stroke attention, cascaded mesh decoder)
//! and the silhouette discriminator.
//!
//! Parameter names are namespaced `enc.*`, `sem.*`, `dec.stage{1,2,3}.*` and
//! `sd.*`.

mod decoder;
mod discriminator;
mod encoder;
pub mod params;

pub use decoder::{decode, topology, DecoderTopology, OUTPUT_LEVEL, OUTPUT_VERTICES, STAGES};
pub use discriminator::discriminate;
pub use encoder::{encode, sem_attention, sketch_input, SemOutput};
pub use params::{Bound, Init, ParamStore};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::geometry::{GeometryError, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("expected a {expected}x{expected} input, got shape {shape:?}")]
    Resolution { expected: usize, shape: Vec<usize> },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which index the attention softmax normalises over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionNorm {
    /// Over the source position `i` of `s_ij`, so each column sums to 1.
    #[default]
    Source,
    /// Over the output position `j`, so each row sums to 1.
    Target,
}

impl FromStr for AttentionNorm {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source" => Ok(AttentionNorm::Source),
            "target" => Ok(AttentionNorm::Target),
            other => Err(NetworkError::Config(format!(
                "unknown attention norm `{other}`"
            ))),
        }
    }
}

impl fmt::Display for AttentionNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionNorm::Source => "source",
            AttentionNorm::Target => "target",
        })
    }
}

/// Architecture hyperparameters. Stored with every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub resolution: usize,
    pub latent: usize,
    pub enc_channels: Vec<usize>,
    pub enc_strides: Vec<usize>,
    pub sem_enabled: bool,
    pub sd_enabled: bool,
    pub lambda_attn: f32,
    pub attention_norm: AttentionNorm,
    pub dec_hidden: usize,
    pub offset_scale: f32,
    pub sd_channels: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            latent: 128,
            enc_channels: vec![16, 32, 64, 128, 128],
            enc_strides: vec![2, 2, 2, 2, 1],
            sem_enabled: true,
            sd_enabled: true,
            lambda_attn: 1.0,
            attention_norm: AttentionNorm::Source,
            dec_hidden: 64,
            offset_scale: 0.75,
            sd_channels: vec![8, 16, 32, 32],
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::Config(m));
        if self.enc_channels.is_empty() || self.enc_channels.len() != self.enc_strides.len() {
            return bad("enc_channels and enc_strides must be non-empty and equally long".into());
        }
        if self.enc_channels.contains(&0)
            || self.enc_strides.contains(&0)
            || self.sd_channels.contains(&0)
        {
            return bad("channel counts and strides must be positive".into());
        }
        if self.latent == 0 || self.dec_hidden == 0 {
            return bad("latent and dec_hidden must be positive".into());
        }
        let down: usize = self.enc_strides.iter().product();
        if self.resolution < 8 || !self.resolution.is_multiple_of(down) {
            return bad(format!(
                "resolution {} must be >= 8 and divisible by {down}",
                self.resolution
            ));
        }
        if self.sd_enabled
            && (self.sd_channels.is_empty()
                || !self.resolution.is_multiple_of(1 << self.sd_channels.len()))
        {
            return bad(format!(
                "resolution {} must be divisible by 2^{}",
                self.resolution,
                self.sd_channels.len()
            ));
        }
        if !(self.offset_scale > 0.0) || !self.lambda_attn.is_finite() {
            return bad("offset_scale must be positive and lambda_attn finite".into());
        }
        Ok(())
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("resolution".into(), self.resolution.to_string()),
            ("latent".into(), self.latent.to_string()),
            ("enc_channels".into(), list(&self.enc_channels)),
            ("enc_strides".into(), list(&self.enc_strides)),
            ("sem_enabled".into(), self.sem_enabled.to_string()),
            ("sd_enabled".into(), self.sd_enabled.to_string()),
            ("lambda_attn".into(), self.lambda_attn.to_string()),
            ("attention_norm".into(), self.attention_norm.to_string()),
            ("dec_hidden".into(), self.dec_hidden.to_string()),
            ("offset_scale".into(), self.offset_scale.to_string()),
            ("sd_channels".into(), list(&self.sd_channels)),
        ]
    }

    /// Applies one `key=value` pair. Returns `Ok(false)` for keys that do not
    /// belong to the architecture.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, NetworkError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, NetworkError> {
            v.trim()
                .parse()
                .map_err(|_| NetworkError::Config(format!("bad value `{v}` for `{key}`")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<usize>, NetworkError> {
            v.split(',').map(|p| num(key, p)).collect()
        }
        match key {
            "resolution" => self.resolution = num(key, value)?,
            "latent" => self.latent = num(key, value)?,
            "enc_channels" => self.enc_channels = list(key, value)?,
            "enc_strides" => self.enc_strides = list(key, value)?,
            "sem_enabled" => self.sem_enabled = num(key, value)?,
            "sd_enabled" => self.sd_enabled = num(key, value)?,
            "lambda_attn" => self.lambda_attn = num(key, value)?,
            "attention_norm" => self.attention_norm = value.trim().parse()?,
            "dec_hidden" => self.dec_hidden = num(key, value)?,
            "offset_scale" => self.offset_scale = num(key, value)?,
            "sd_channels" => self.sd_channels = list(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: NetConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let init = Init::new(seed);
        let mut params = ParamStore::new();
        encoder::init_encoder(&cfg, &init, &mut params)?;
        decoder::init_decoder(&cfg, &init, &mut params)?;
        if cfg.sd_enabled {
            discriminator::init_discriminator(&cfg, &init, &mut params)?;
        }
        Ok(Self { cfg, params })
    }

    /// Checks that `params` hold exactly the tensors this architecture
    /// expects, with matching shapes.
    pub fn from_parts(cfg: NetConfig, params: ParamStore) -> Result<Self, NetworkError> {
        let reference = Self::init(cfg.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(NetworkError::Shape(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = params.names().find(|n| reference.params.get(n).is_err()) {
            return Err(NetworkError::Config(format!(
                "unexpected parameter `{extra}`"
            )));
        }
        Ok(Self { cfg, params })
    }

    /// Sketch (`[R, R]`, 0 = stroke) to mesh, without recording gradients.
    pub fn infer(&self, sketch: &Tensor) -> Result<Mesh, NetworkError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let z = encode(&mut tape, &bound, &self.cfg, sketch)?;
        let v = decode(&mut tape, &bound, &self.cfg, z)?;
        let faces = topology().faces.as_ref().clone();
        let vertices = tape
            .value(v)?
            .data()
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Mesh::new(vertices, faces)?)
    }

    /// Decodes a `[1, L]` code.
    pub fn decode_code(&self, code: &Tensor) -> Result<Mesh, NetworkError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let z = tape.constant(code.clone());
        let v = decode(&mut tape, &bound, &self.cfg, z)?;
        let vertices = tape
            .value(v)?
            .data()
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Mesh::new(vertices, topology().faces.as_ref().clone())?)
    }

    pub fn code(&self, sketch: &Tensor) -> Result<Tensor, NetworkError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let z = encode(&mut tape, &bound, &self.cfg, sketch)?;
        Ok(tape.value(z)?.clone())
    }

    pub fn logit(&self, silhouette: &Tensor) -> Result<f32, NetworkError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let s = tape.constant(silhouette.clone());
        let l = discriminate(&mut tape, &bound, &self.cfg, s)?;
        Ok(tape.value(l)?.data()[0])
    }
}
